use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BrightnessClass, CameraPosition, GazeTruth, EYE_DIMS, SCREEN_DIMS};
use crate::imaging::{resize, ImageBuffer, Rect};
use crate::iris::{Circle, IrisCircle};
use crate::reflection::{centered_rect, make_thumbnail, ScreenThumbnail, DEFAULT_BLUR_SIGMA, THUMB_H, THUMB_W};

/// Lid coverage added per unit of downward gaze (top camera).
pub const LID_SLOPE: f64 = 1.0;
/// Lid coverage multiplier for a camera below the screen.
pub const BOTTOM_ATTENUATION: f64 = 0.35;

const PUPIL_RGB: [f64; 3] = [12.0, 12.0, 14.0];
const LASH_RGB: [f64; 3] = [35.0, 28.0, 25.0];
const LASH_PX: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub screen_dims: (usize, usize),
    pub crop_dims: (usize, usize),
    pub iris_radius: f64,
    /// Iris center at centered gaze.
    pub iris_center: (f64, f64),
    /// Iris displacement in pixels per unit of normalized gaze offset.
    pub gaze_shift: (f64, f64),
    pub iris_texture_seed: u64,
    pub iris_rgb: [f64; 3],
    pub pupil_frac: f64,
    pub sclera_luma: f64,
    pub skin_rgb: [f64; 3],
    pub reflection_gain: f64,
    pub reflection_base_scale: f64,
    pub scale_jitter: u32,
    pub eyelid_occlusion: f64,
    pub camera_position: CameraPosition,
    pub noise_sigma: f64,
    /// Right eye: the layout is mirrored left to right.
    pub mirrored: bool,
    /// Eye-corner landmarks reported with the render (normalized frame).
    pub eye_corners: [f64; 4],
    /// Half the corner-to-corner distance, in iris radii.
    pub corner_span: f64,
    pub blur_sigma: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            screen_dims: SCREEN_DIMS,
            crop_dims: EYE_DIMS,
            iris_radius: 50.0,
            iris_center: (250.0, 125.0),
            gaze_shift: (45.0, 45.0),
            iris_texture_seed: 1,
            iris_rgb: [95.0, 68.0, 50.0],
            pupil_frac: 0.4,
            sclera_luma: 225.0,
            skin_rgb: [200.0, 160.0, 140.0],
            reflection_gain: 0.85,
            reflection_base_scale: 0.1,
            scale_jitter: 0,
            eyelid_occlusion: 0.0,
            camera_position: CameraPosition::Top,
            noise_sigma: 0.0,
            mirrored: false,
            eye_corners: [0.35, 0.45, 0.42, 0.45],
            corner_span: 2.4,
            blur_sigma: DEFAULT_BLUR_SIGMA,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), String> {
        let finite = [
            self.iris_radius,
            self.iris_center.0,
            self.iris_center.1,
            self.gaze_shift.0,
            self.gaze_shift.1,
            self.pupil_frac,
            self.sclera_luma,
            self.reflection_gain,
            self.reflection_base_scale,
            self.eyelid_occlusion,
            self.noise_sigma,
            self.blur_sigma,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err("non-finite scene parameter".into());
        }
        if !(0.0..=1.0).contains(&self.eyelid_occlusion) {
            return Err("eyelid_occlusion must lie in [0, 1]".into());
        }
        if self.scale_jitter > 6 {
            return Err("scale_jitter must lie in [0, 6]".into());
        }
        let (w, h) = (self.crop_dims.0 as f64, self.crop_dims.1 as f64);
        let r = self.iris_radius;
        let (mx, my) = (self.gaze_shift.0.abs() / 2.0, self.gaze_shift.1.abs() / 2.0);
        let (cx, cy) = self.iris_center;
        if !(r > 0.0 && cx - r - mx >= 0.0 && cx + r + mx <= w - 1.0 && cy - r - my >= 0.0 && cy + r + my <= h - 1.0) {
            return Err("iris does not fit in the eye image".into());
        }
        Ok(())
    }

    /// Iris circle for a gaze point.
    pub fn iris_at(&self, gaze_norm: (f64, f64)) -> IrisCircle {
        Circle::new(
            self.iris_center.0 + (gaze_norm.0 - 0.5) * self.gaze_shift.0,
            self.iris_center.1 + (gaze_norm.1 - 0.5) * self.gaze_shift.1,
            self.iris_radius,
        )
    }

    /// Fraction of the iris diameter covered by the upper lid.
    pub fn lid_coverage(&self, gaze_norm: (f64, f64)) -> f64 {
        let top = (self.eyelid_occlusion + LID_SLOPE * (gaze_norm.1 - 0.5)).clamp(0.0, 1.0);
        match self.camera_position {
            CameraPosition::Top => top,
            CameraPosition::Bottom => BOTTOM_ATTENUATION * top,
        }
    }

    /// Reflection box size: base width `round(scale * 2r)` plus jitter,
    /// height from the thumbnail aspect.
    pub fn reflection_dims(&self) -> (u32, u32) {
        let w0 = (self.reflection_base_scale * 2.0 * self.iris_radius).round().max(1.0) as u32;
        let w = w0 + self.scale_jitter;
        let h = ((w as f64 * THUMB_H as f64 / THUMB_W as f64).round() as u32).max(1);
        (w, h)
    }
}

// Upper and lower lid parabolas through the two eye corners.
struct Lids {
    apex_x: f64,
    upper_apex: f64,
    lower_apex: f64,
    left: (f64, f64),
    right: (f64, f64),
}

impl Lids {
    fn new(cfg: &SceneConfig, iris: &IrisCircle, coverage: f64) -> Self {
        let r = cfg.iris_radius;
        let (sx, sy) = cfg.iris_center;
        // Inner corner sits lower and the lid apex leans nasally.
        let nasal = if cfg.mirrored { -1.0 } else { 1.0 };
        let inner = (sx + nasal * cfg.corner_span * r, sy + 0.2 * r);
        let outer = (sx - nasal * cfg.corner_span * r, sy - 0.05 * r);
        let (left, right) = if cfg.mirrored { (inner, outer) } else { (outer, inner) };
        Self {
            apex_x: iris.cx + nasal * 0.15 * r,
            upper_apex: iris.cy - r + 2.0 * r * coverage,
            lower_apex: sy + 1.1 * r,
            left,
            right,
        }
    }

    // Lid y positions at column x, or None outside the corners.
    fn at(&self, x: f64) -> Option<(f64, f64)> {
        if x < self.left.0 || x > self.right.0 {
            return None;
        }
        let (u, cy) = if x <= self.apex_x {
            ((self.apex_x - x) / (self.apex_x - self.left.0), self.left.1)
        } else {
            ((x - self.apex_x) / (self.right.0 - self.apex_x), self.right.1)
        };
        let u2 = u * u;
        Some((
            self.upper_apex + (cy - self.upper_apex) * u2,
            self.lower_apex + (cy - self.lower_apex) * u2,
        ))
    }

    /// Visible-eyeball coverage of pixel (x, y).
    fn opening(&self, x: f64, y: f64) -> f64 {
        match self.at(x) {
            Some((up, lo)) => (y - up + 0.5).clamp(0.0, 1.0) * (lo - y + 0.5).clamp(0.0, 1.0),
            None => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionGeometry {
    pub center_offset: (f64, f64),
    pub reflection_box: Rect,
    pub occluded_fraction: f64,
}

/// Reflection placement for a gaze point: the offset from the iris center
/// is `((gx - 0.5) w, (0.5 - gy) h)`, so gaze toward the top of the screen
/// moves the reflection down in the image.
pub fn reflection_geometry(gaze_norm: (f64, f64), cfg: &SceneConfig) -> ReflectionGeometry {
    let iris = cfg.iris_at(gaze_norm);
    let (w, h) = cfg.reflection_dims();
    let offset = ((gaze_norm.0 - 0.5) * w as f64, (0.5 - gaze_norm.1) * h as f64);
    let rect = centered_rect(iris.cx + offset.0, iris.cy + offset.1, w, h);
    let lids = Lids::new(cfg, &iris, cfg.lid_coverage(gaze_norm));
    let mut covered = 0.0;
    for y in rect.y..rect.y + h as i32 {
        for x in rect.x..rect.x + w as i32 {
            covered += 1.0 - lids.opening(x as f64, y as f64);
        }
    }
    ReflectionGeometry {
        center_offset: offset,
        reflection_box: rect,
        occluded_fraction: covered / rect.area() as f64,
    }
}

// Seeded radial iris texture, sampled by angle bin and normalized radius.
struct IrisTexture {
    bins: Vec<f64>,
    harmonics: Vec<(f64, f64, f64)>,
    ring_phase: f64,
}

const ANGLE_BINS: usize = 720;

impl IrisTexture {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..ANGLE_BINS).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Light circular smoothing gives radial fibres a few bins wide.
        let bins = (0..ANGLE_BINS)
            .map(|i| {
                (-2i64..=2)
                    .map(|d| raw[(i as i64 + d).rem_euclid(ANGLE_BINS as i64) as usize])
                    .sum::<f64>()
                    / 5.0
            })
            .collect();
        let harmonics = (1..=6)
            .map(|k| {
                (
                    k as f64,
                    rng.random_range(2.0..8.0) / (k as f64).sqrt(),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        Self {
            bins,
            harmonics,
            ring_phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    // Relative brightness modulation in percent.
    fn sample(&self, theta: f64, rho: f64) -> f64 {
        let b = ((theta + std::f64::consts::PI) / std::f64::consts::TAU * ANGLE_BINS as f64) as usize % ANGLE_BINS;
        let smooth: f64 = self.harmonics.iter().map(|&(k, a, p)| a * (k * theta + p).sin()).sum();
        let rings = 4.0 * (std::f64::consts::TAU * 3.0 * rho + self.ring_phase).sin();
        smooth * (0.6 + 0.4 * rho) + 18.0 * self.bins[b] + rings
    }
}

/// Renders one eye against a screen frame; see [`render_eye_with_thumbnail`].
pub fn render_eye(
    cfg: &SceneConfig,
    gaze_norm: (f64, f64),
    screen_frame: &ImageBuffer,
    seed: u64,
) -> (ImageBuffer, GazeTruth) {
    let thumb = make_thumbnail(screen_frame, cfg.blur_sigma).expect("screen frame smaller than thumbnail");
    let class = BrightnessClass::from_mean_luma(screen_frame.mean());
    render_eye_with_thumbnail(cfg, gaze_norm, &thumb, class, seed)
}

/// Layers: sclera, textured iris, pupil, additive screen reflection on the
/// cornea, eyelids with lashes, Gaussian pixel noise. The reflection is the
/// screen thumbnail resized to the reflection box.
pub fn render_eye_with_thumbnail(
    cfg: &SceneConfig,
    gaze_norm: (f64, f64),
    thumb: &ScreenThumbnail,
    class: BrightnessClass,
    seed: u64,
) -> (ImageBuffer, GazeTruth) {
    let (w, h) = cfg.crop_dims;
    let iris = cfg.iris_at(gaze_norm);
    let geom = reflection_geometry(gaze_norm, cfg);
    let rb = geom.reflection_box;
    let lids = Lids::new(cfg, &iris, cfg.lid_coverage(gaze_norm));
    let template = resize(&thumb.image, rb.w as usize, rb.h as usize);
    let tex = IrisTexture::new(cfg.iris_texture_seed);
    let r = cfg.iris_radius;
    let pr = cfg.pupil_frac * r;
    let span = cfg.corner_span * r;
    let s = cfg.sclera_luma;
    let sclera = [s, s - 6.0, s - 10.0];

    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).unwrap());
    let mut img = ImageBuffer::new(w, h, 3);
    let data = img.data_mut();
    for y in 0..h {
        let yf = y as f64;
        for x in 0..w {
            let xf = x as f64;
            let open = lids.opening(xf, yf);
            let mut eye = [0.0; 3];
            if open > 0.0 {
                let shade = 1.0 - 0.15 * ((xf - cfg.iris_center.0) / span).powi(2);
                for c in 0..3 {
                    eye[c] = sclera[c] * shade;
                }
                let d = (xf - iris.cx).hypot(yf - iris.cy);
                let a_iris = (r + 0.5 - d).clamp(0.0, 1.0);
                if a_iris > 0.0 {
                    let rho = (d / r).min(1.0);
                    let theta = (yf - iris.cy).atan2(xf - iris.cx);
                    let limbal = if rho > 0.85 { 1.0 - 0.35 * (rho - 0.85) / 0.15 } else { 1.0 };
                    let m = (1.0 + tex.sample(theta, rho) / 100.0) * limbal;
                    let a_pupil = (pr + 0.5 - d).clamp(0.0, 1.0);
                    for c in 0..3 {
                        let iris_c = cfg.iris_rgb[c] * m;
                        let inner = iris_c * (1.0 - a_pupil) + PUPIL_RGB[c] * a_pupil;
                        eye[c] = eye[c] * (1.0 - a_iris) + inner * a_iris;
                    }
                }
                let (bx, by) = (x as i32 - rb.x, y as i32 - rb.y);
                if bx >= 0 && by >= 0 && (bx as u32) < rb.w && (by as u32) < rb.h {
                    let t = template.get(bx as usize, by as usize, 0) as f64 / 255.0;
                    for v in &mut eye {
                        *v += cfg.reflection_gain * t * (255.0 - *v);
                    }
                }
            }
            let mut skin = cfg.skin_rgb;
            if let Some((up, _)) = lids.at(xf) {
                let lash = ((up + 0.5 - yf).min(yf - (up - LASH_PX) + 0.5)).clamp(0.0, 1.0);
                for c in 0..3 {
                    skin[c] = skin[c] * (1.0 - lash) + LASH_RGB[c] * lash;
                }
            }
            let i = (y * w + x) * 3;
            for c in 0..3 {
                let mut v = open * eye[c] + (1.0 - open) * skin[c];
                if let Some(n) = &noise {
                    v += n.sample(&mut noise_rng);
                }
                data[i + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    let truth = GazeTruth {
        gaze_px: (gaze_norm.0 * cfg.screen_dims.0 as f64, gaze_norm.1 * cfg.screen_dims.1 as f64),
        gaze_norm,
        iris,
        reflection_box: rb,
        reflection_offset: geom.center_offset,
        eye_corners: cfg.eye_corners,
        occluded_fraction: geom.occluded_fraction,
        brightness_class: class,
    };
    (img, truth)
}
