use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::render::{render_eye_with_thumbnail, SceneConfig};
use super::screens::{gen_screen_stream, ScreenFrame, ScreenStream};
use super::trajectory::{gen_trajectory, TrajectorySample};
use super::{derive_seed, BrightnessClass, CameraPosition, GazeTruth, DEFAULT_FPS, EYE_DIMS, SCREEN_DIMS};
use crate::imaging::{ImageBuffer, ImageError, Rect};
use crate::iris::InitialIrisEstimate;
use crate::reflection::{make_thumbnail, ScreenThumbnail, DEFAULT_BLUR_SIGMA};

const TAG_PARTICIPANT: u64 = 0x70;
const TAG_SESSION: u64 = 0x73;
const TAG_FRAME: u64 = 0x66;
const TAG_SCREENS: u64 = 0x5c;

/// Landmark noise on normalized eye corners.
pub const CORNER_NOISE: f64 = 0.0015;
/// Per-frame jitter of the eye-image placement, pixels.
pub const CROP_JITTER_PX: f64 = 1.0;
/// Noise of the initial iris-center estimate, pixels.
pub const INIT_CENTER_NOISE_PX: f64 = 2.5;
/// Head translation per unit of normalized gaze offset (frame units).
pub const HEAD_FOLLOW: (f64, f64) = (0.04, 0.03);

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: invalid manifest: {msg}")]
    Manifest { path: String, msg: String },
    #[error("invalid corpus configuration: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_participants: usize,
    pub sessions: usize,
    pub seed: u64,
    pub camera: CameraPosition,
    pub dark_prob: f64,
    pub noise_sigma: f64,
    pub fps: f64,
    /// Keep every `frame_stride`-th non-warmup sample.
    pub frame_stride: usize,
    pub blur_sigma: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_participants: 6,
            sessions: 6,
            seed: 1,
            camera: CameraPosition::Top,
            dark_prob: 0.1,
            noise_sigma: 3.0,
            fps: DEFAULT_FPS,
            frame_stride: 1,
            blur_sigma: DEFAULT_BLUR_SIGMA,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_participants < 2 {
            return Err(DatasetError::Config("need at least 2 participants".into()));
        }
        if self.sessions == 0 || self.frame_stride == 0 || !(self.fps > 0.0) {
            return Err(DatasetError::Config("sessions, stride and fps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.dark_prob) || !(self.noise_sigma >= 0.0) {
            return Err(DatasetError::Config("dark_prob must be in [0, 1], noise >= 0".into()));
        }
        Ok(())
    }
}

/// Persistent per-participant eye appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: usize,
    pub iris_radius: f64,
    pub texture_seeds: [u64; 2],
    pub eyelid_occlusion: f64,
    pub iris_rgb: [f64; 3],
    pub pupil_frac: f64,
    pub sclera_luma: f64,
    pub skin_rgb: [f64; 3],
    pub gaze_gain: (f64, f64),
    pub face_scale: f64,
}

impl Participant {
    pub fn draw(seed: u64, id: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_PARTICIPANT, id as u64]));
        const IRIS: [[f64; 3]; 4] = [
            [95.0, 68.0, 50.0],
            [70.0, 50.0, 38.0],
            [88.0, 104.0, 118.0],
            [105.0, 92.0, 60.0],
        ];
        const SKIN: [[f64; 3]; 3] = [[205.0, 165.0, 145.0], [170.0, 125.0, 100.0], [120.0, 85.0, 65.0]];
        let tint = rng.random_range(0.85..1.15);
        let base = IRIS[rng.random_range(0..IRIS.len())];
        Self {
            id,
            iris_radius: rng.random_range(40.0..=60.0),
            texture_seeds: [rng.random(), rng.random()],
            eyelid_occlusion: rng.random_range(0.1..=0.5),
            iris_rgb: base.map(|c| c * tint),
            pupil_frac: rng.random_range(0.35..0.45),
            sclera_luma: rng.random_range(210.0..235.0),
            skin_rgb: SKIN[rng.random_range(0..SKIN.len())],
            gaze_gain: (rng.random_range(0.8..1.0), rng.random_range(0.8..1.0)),
            face_scale: rng.random_range(0.9..1.1),
        }
    }
}

/// Per-session head pose and capture geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPose {
    pub session: usize,
    pub head: (f64, f64),
    pub distance_scale: f64,
    pub crop_offsets: [(f64, f64); 2],
    pub scale_jitter: u32,
    pub screen_seed: u64,
}

impl SessionPose {
    pub fn draw(seed: u64, participant: usize, session: usize) -> Self {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_SESSION, participant as u64, session as u64]));
        let mut off = || (rng.random_range(-10.0..10.0), rng.random_range(-6.0..6.0));
        let crop_offsets = [off(), off()];
        Self {
            session,
            head: (0.5 + rng.random_range(-0.06..0.06), 0.45 + rng.random_range(-0.06..0.06)),
            distance_scale: rng.random_range(0.9..1.1),
            crop_offsets,
            scale_jitter: rng.random_range(0..=6),
            screen_seed: derive_seed(seed, &[TAG_SCREENS, participant as u64, session as u64]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimEye {
    pub image: ImageBuffer,
    pub truth: GazeTruth,
    pub init: InitialIrisEstimate,
}

/// One rendered frame (both eyes) with its ground truth.
#[derive(Debug, Clone)]
pub struct SimFrame {
    pub participant: usize,
    pub session: usize,
    pub frame_index: usize,
    pub camera: CameraPosition,
    pub sample: TrajectorySample,
    pub gaze_norm: (f64, f64),
    /// Outer corners of the eye pair: left (x, y), right (x, y).
    pub eye_bounds: [f64; 4],
    pub brightness_class: BrightnessClass,
    pub screen_prev: Option<usize>,
    pub screen_next: usize,
    pub dissolve_alpha: f64,
    pub eyes: [SimEye; 2],
}

pub struct Simulator {
    pub cfg: CorpusConfig,
    pub participants: Vec<Participant>,
    trajectory: Vec<TrajectorySample>,
}

impl Simulator {
    pub fn new(cfg: CorpusConfig) -> Result<Self, DatasetError> {
        cfg.validate()?;
        let participants = (0..cfg.n_participants).map(|p| Participant::draw(cfg.seed, p)).collect();
        let trajectory = gen_trajectory(SCREEN_DIMS, cfg.fps);
        Ok(Self {
            cfg,
            participants,
            trajectory,
        })
    }

    /// Trajectory samples rendered per session, with their sample indices.
    pub fn kept_samples(&self) -> Vec<(usize, TrajectorySample)> {
        self.trajectory
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, s)| !s.in_warmup)
            .enumerate()
            .filter(|(k, _)| k % self.cfg.frame_stride == 0)
            .map(|(_, x)| x)
            .collect()
    }

    pub fn frames_per_session(&self) -> usize {
        self.kept_samples().len()
    }

    pub fn screen_stream(&self, pose: &SessionPose) -> ScreenStream {
        let duration = self.trajectory.last().map_or(1.0, |s| s.t) + 1.0;
        gen_screen_stream(pose.screen_seed, duration, self.cfg.dark_prob, SCREEN_DIMS)
    }

    /// Scene for one eye at a given pose.
    pub fn scene(&self, p: &Participant, pose: &SessionPose, eye: usize, crop_shift: (f64, f64), corners: [f64; 4]) -> SceneConfig {
        let r = p.iris_radius;
        let (ox, oy) = pose.crop_offsets[eye];
        SceneConfig {
            iris_radius: r,
            iris_center: (
                EYE_DIMS.0 as f64 / 2.0 + ox + crop_shift.0,
                EYE_DIMS.1 as f64 / 2.0 + oy + crop_shift.1,
            ),
            gaze_shift: (0.9 * r * p.gaze_gain.0, 0.9 * r * p.gaze_gain.1),
            iris_texture_seed: p.texture_seeds[eye],
            iris_rgb: p.iris_rgb,
            pupil_frac: p.pupil_frac,
            sclera_luma: p.sclera_luma,
            skin_rgb: p.skin_rgb,
            scale_jitter: pose.scale_jitter,
            eyelid_occlusion: p.eyelid_occlusion,
            camera_position: self.cfg.camera,
            noise_sigma: self.cfg.noise_sigma,
            mirrored: eye == 1,
            eye_corners: corners,
            blur_sigma: self.cfg.blur_sigma,
            ..SceneConfig::default()
        }
    }

    /// Renders every kept frame of one session in order, passing each frame
    /// with its logged screen frame and thumbnail to `visit`.
    pub fn run_session<F>(&self, participant: usize, session: usize, mut visit: F)
    where
        F: FnMut(SimFrame, &ScreenFrame, &ScreenThumbnail),
    {
        let p = &self.participants[participant];
        let pose = SessionPose::draw(self.cfg.seed, participant, session);
        let stream = self.screen_stream(&pose);
        let mut cache = Vec::new();
        let std = Normal::new(0.0, 1.0).unwrap();
        for (idx, sample) in self.kept_samples() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                self.cfg.seed,
                &[TAG_FRAME, participant as u64, session as u64, idx as u64],
            ));
            let gaze_norm = (
                sample.gaze_px.0 / SCREEN_DIMS.0 as f64,
                sample.gaze_px.1 / SCREEN_DIMS.1 as f64,
            );
            let screen = stream.frame_at(sample.t, Some(sample.gaze_px), &mut cache);
            let thumb = make_thumbnail(&screen.image, self.cfg.blur_sigma).expect("screen is full size");

            // Eye landmarks in the camera frame.
            let s = p.face_scale * pose.distance_scale;
            let head = (
                pose.head.0 + HEAD_FOLLOW.0 * (gaze_norm.0 - 0.5),
                pose.head.1 + HEAD_FOLLOW.1 * (gaze_norm.1 - 0.5),
            );
            let mut eyes = Vec::with_capacity(2);
            let mut all_corners = [[0.0; 4]; 2];
            for (eye, corners_out) in all_corners.iter_mut().enumerate() {
                let side = if eye == 0 { -1.0 } else { 1.0 };
                let center = (head.0 + side * 0.09 * s, head.1);
                let mut corners = [
                    center.0 - 0.035 * s,
                    center.1 + if eye == 0 { 0.0 } else { 0.004 * s },
                    center.0 + 0.035 * s,
                    center.1 + if eye == 0 { 0.004 * s } else { 0.0 },
                ];
                for c in &mut corners {
                    *c += CORNER_NOISE * std.sample(&mut rng);
                }
                *corners_out = corners;
                let crop_shift = (CROP_JITTER_PX * std.sample(&mut rng), CROP_JITTER_PX * std.sample(&mut rng));
                let scene = self.scene(p, &pose, eye, crop_shift, corners);
                let render_seed: u64 = rng.random();
                let (image, truth) =
                    render_eye_with_thumbnail(&scene, gaze_norm, &thumb, screen.brightness_class, render_seed);
                let width = 2.0 * p.iris_radius * (1.0 + 0.05 * std.sample(&mut rng));
                let height = width * rng.random_range(0.9..1.0);
                let init = InitialIrisEstimate {
                    center: (
                        truth.iris.cx + INIT_CENTER_NOISE_PX * std.sample(&mut rng),
                        truth.iris.cy + INIT_CENTER_NOISE_PX * std.sample(&mut rng),
                    ),
                    width,
                    height,
                };
                eyes.push(SimEye { image, truth, init });
            }
            let eyes: [SimEye; 2] = eyes.try_into().unwrap();
            let frame = SimFrame {
                participant,
                session,
                frame_index: idx,
                camera: self.cfg.camera,
                sample,
                gaze_norm,
                eye_bounds: [all_corners[0][0], all_corners[0][1], all_corners[1][2], all_corners[1][3]],
                brightness_class: screen.brightness_class,
                screen_prev: screen.prev_index,
                screen_next: screen.next_index,
                dissolve_alpha: screen.dissolve_alpha,
                eyes,
            };
            visit(frame, &screen, &thumb);
        }
    }

    /// All `(participant, session)` pairs in generation order.
    pub fn sessions(&self) -> Vec<(usize, usize)> {
        (0..self.cfg.n_participants)
            .flat_map(|p| (0..self.cfg.sessions).map(move |s| (p, s)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleGt {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEye {
    pub frame_png: String,
    pub iris_gt: CircleGt,
    pub iris_init: InitialIrisEstimate,
    pub reflection_gt: Rect,
    pub eye_corners: [f64; 4],
    pub occluded_fraction: f64,
}

/// One manifest row. Top-level per-eye fields mirror the left eye; the
/// occluded fraction is the mean over both eyes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub participant_id: usize,
    pub session: usize,
    pub frame_index: usize,
    pub path_id: usize,
    pub camera: CameraPosition,
    pub t_s: f64,
    pub frame_png: String,
    pub screen_png: String,
    pub screen_prev_png: Option<String>,
    pub dissolve_alpha: f64,
    pub target_px: [f64; 2],
    pub gaze_px: [f64; 2],
    pub gaze_norm: [f64; 2],
    pub eye_corners: [f64; 4],
    pub eye_bounds: [f64; 4],
    pub iris_gt: CircleGt,
    pub reflection_gt: Rect,
    pub occluded_fraction: f64,
    pub brightness_class: BrightnessClass,
    pub in_warmup: bool,
    pub blink: bool,
    pub eyes: [ManifestEye; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Manifest {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(io_err(path))
    }
}

fn screen_name(p: usize, s: usize, k: usize) -> String {
    format!("screens/p{p:02}_s{s}_{k:04}.png")
}

/// Renders a corpus to `out_dir`: eye PNGs, one PNG per distinct screen,
/// and `manifest.json` with paths relative to `out_dir`.
pub fn gen_dataset(cfg: &CorpusConfig, out_dir: &Path) -> Result<Manifest, DatasetError> {
    let sim = Simulator::new(cfg.clone())?;
    for sub in ["eyes", "screens"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let mut rows = Vec::new();
    for (p, s) in sim.sessions() {
        let stream = sim.screen_stream(&SessionPose::draw(cfg.seed, p, s));
        let mut written: HashSet<usize> = HashSet::new();
        let mut err: Option<DatasetError> = None;
        sim.run_session(p, s, |frame, _screen, _thumb| {
            if err.is_some() {
                return;
            }
            let res = (|| -> Result<ManifestRow, DatasetError> {
                for k in frame.screen_prev.into_iter().chain([frame.screen_next]) {
                    if written.insert(k) {
                        stream.screen(k).write_png(&out_dir.join(screen_name(p, s, k)))?;
                    }
                }
                let mut eyes = Vec::new();
                for (e, eye) in frame.eyes.iter().enumerate() {
                    let name = format!("eyes/p{p:02}_s{s}_{:05}_{}.png", frame.frame_index, ["l", "r"][e]);
                    eye.image.write_png(&out_dir.join(&name))?;
                    let t = &eye.truth;
                    eyes.push(ManifestEye {
                        frame_png: name,
                        iris_gt: CircleGt {
                            cx: t.iris.cx,
                            cy: t.iris.cy,
                            r: t.iris.radius,
                        },
                        iris_init: eye.init,
                        reflection_gt: t.reflection_box,
                        eye_corners: t.eye_corners,
                        occluded_fraction: t.occluded_fraction,
                    });
                }
                let eyes: [ManifestEye; 2] = eyes.try_into().unwrap();
                let left = &frame.eyes[0].truth;
                Ok(ManifestRow {
                    participant_id: p,
                    session: s,
                    frame_index: frame.frame_index,
                    path_id: frame.sample.path_id,
                    camera: frame.camera,
                    t_s: frame.sample.t,
                    frame_png: eyes[0].frame_png.clone(),
                    screen_png: screen_name(p, s, frame.screen_next),
                    screen_prev_png: frame.screen_prev.map(|k| screen_name(p, s, k)),
                    dissolve_alpha: frame.dissolve_alpha,
                    target_px: [frame.sample.gaze_px.0, frame.sample.gaze_px.1],
                    gaze_px: [frame.sample.gaze_px.0, frame.sample.gaze_px.1],
                    gaze_norm: [frame.gaze_norm.0, frame.gaze_norm.1],
                    eye_corners: left.eye_corners,
                    eye_bounds: frame.eye_bounds,
                    iris_gt: eyes[0].iris_gt,
                    reflection_gt: left.reflection_box,
                    occluded_fraction: (eyes[0].occluded_fraction + eyes[1].occluded_fraction) / 2.0,
                    brightness_class: frame.brightness_class,
                    in_warmup: frame.sample.in_warmup,
                    blink: false,
                    eyes,
                })
            })();
            match res {
                Ok(row) => rows.push(row),
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    let manifest = Manifest { rows };
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Path of a manifest entry relative to the manifest's directory.
pub fn resolve(manifest_path: &Path, rel: &str) -> PathBuf {
    manifest_path.parent().unwrap_or(Path::new(".")).join(rel)
}
