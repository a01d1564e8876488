use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{io_err, HarnessError};
use crate::imaging::{blur_resize, crop, to_gray, FloatPlane, ImageBuffer};
use crate::iris::{locate_iris_with, InitialIrisEstimate, IrisCircle, IrisFit, LocateConfig};
use crate::reflection::{
    centered_rect, make_thumbnail, multiscale_match, reflection_vector, ReflectionVector, ScreenThumbnail,
    HEATMAP_H, HEATMAP_W,
};
use crate::regressor::{FeatureBundle, CROP_H, CROP_W};
use crate::simulator::dataset::{resolve, Manifest, ManifestRow, SimFrame, Simulator};
use crate::simulator::screens::{cross_dissolve, draw_target};
use crate::simulator::{BrightnessClass, CameraPosition};

/// Eye-crop patch size in iris diameters.
pub const CROP_SPAN: (f64, f64) = (2.8, 1.4);

/// Extracted features of one frame. Warmup and blink frames never
/// produce rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub participant: usize,
    pub session: usize,
    pub frame: usize,
    pub path_id: usize,
    pub gaze_px: (f64, f64),
    pub brightness_class: BrightnessClass,
    pub occluded_fraction: f64,
    pub peak_scores: [f64; 2],
    /// Some stage fell back (unrefined iris or unreadable input).
    pub degraded: bool,
    pub bundle: FeatureBundle,
}

#[derive(Debug, Clone)]
pub struct EyeFeatures {
    pub iris: IrisFit,
    pub crop: ImageBuffer,
    pub heatmap: FloatPlane,
    pub vector: ReflectionVector,
    pub peak_score: f64,
    pub templates_evaluated: usize,
    pub mask: Option<FloatPlane>,
}

/// Grayscale patch around the iris, resampled to the model's crop size.
pub fn eye_crop(img: &ImageBuffer, iris: &IrisCircle) -> ImageBuffer {
    let d = iris.diameter().max(1.0);
    let w = (CROP_SPAN.0 * d).round().max(1.0) as u32;
    let h = (CROP_SPAN.1 * d).round().max(1.0) as u32;
    let patch = to_gray(&crop(img, centered_rect(iris.cx, iris.cy, w, h)));
    blur_resize(&patch, 0.4 * w as f64 / CROP_W as f64, CROP_W, CROP_H)
}

/// Iris refinement, crop and reflection matching for one eye image.
pub fn extract_eye(img: &ImageBuffer, init: &InitialIrisEstimate, thumb: &ScreenThumbnail, keep_mask: bool) -> EyeFeatures {
    let (iris, mask) = match locate_iris_with(img, init, &LocateConfig::default()) {
        Ok(r) => r,
        Err(e) => {
            warn!("iris location failed ({e}); using the initial estimate");
            (
                IrisFit {
                    circle: init.as_circle(),
                    degraded: true,
                    inliers: 0,
                    contour_points: 0,
                },
                None,
            )
        }
    };
    let m = multiscale_match(img, &iris.circle, thumb);
    let vector = reflection_vector(&iris.circle, &m);
    EyeFeatures {
        crop: eye_crop(img, &iris.circle),
        heatmap: m.heatmap,
        vector,
        peak_score: m.peak_score,
        templates_evaluated: m.templates_evaluated,
        iris,
        mask: mask.filter(|_| keep_mask),
    }
}

fn assemble(eye_bounds: [f64; 4], thumb: &ScreenThumbnail, eyes: &[EyeFeatures; 2]) -> FeatureBundle {
    let mut b = FeatureBundle::new(eye_bounds.map(|v| v as f32));
    b.eye_crops = Some([eyes[0].crop.clone(), eyes[1].crop.clone()]);
    b.thumbnail = Some(thumb.image.clone());
    b.heatmaps = Some([eyes[0].heatmap.clone(), eyes[1].heatmap.clone()]);
    for (e, f) in eyes.iter().enumerate() {
        b.set_vector(e, (!f.vector.mask).then_some(f.vector.v));
    }
    b
}

fn simulated_row(frame: &SimFrame, thumb: &ScreenThumbnail) -> FeatureRow {
    let eyes = [0, 1].map(|e| extract_eye(&frame.eyes[e].image, &frame.eyes[e].init, thumb, false));
    FeatureRow {
        participant: frame.participant,
        session: frame.session,
        frame: frame.frame_index,
        path_id: frame.sample.path_id,
        gaze_px: frame.sample.gaze_px,
        brightness_class: frame.brightness_class,
        occluded_fraction: (frame.eyes[0].truth.occluded_fraction + frame.eyes[1].truth.occluded_fraction) / 2.0,
        peak_scores: [eyes[0].peak_score, eyes[1].peak_score],
        degraded: eyes.iter().any(|e| e.iris.degraded),
        bundle: assemble(frame.eye_bounds, thumb, &eyes),
    }
}

/// Renders and extracts a simulated corpus without touching disk,
/// parallel over sessions, rows in generation order.
pub fn extract_simulated(sim: &Simulator) -> Vec<FeatureRow> {
    let sessions = sim.sessions();
    super::with_pool(|| {
        let per: Vec<Vec<FeatureRow>> = sessions
            .par_iter()
            .map(|&(p, s)| {
                let mut rows = Vec::new();
                sim.run_session(p, s, |frame, _, thumb| rows.push(simulated_row(&frame, thumb)));
                rows
            })
            .collect();
        per.into_iter().flatten().collect()
    })
}

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    /// Write segmentation masks here as HFG1 planes.
    pub dump_masks: Option<PathBuf>,
    /// Thumbnail blur at native screen resolution.
    pub blur_sigma: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            dump_masks: None,
            blur_sigma: crate::reflection::DEFAULT_BLUR_SIGMA,
        }
    }
}

// Rebuilds the logged screen frame of a manifest row.
pub(super) struct ScreenCache {
    base: PathBuf,
    loaded: Vec<(String, ImageBuffer)>,
}

impl ScreenCache {
    pub(super) fn new(manifest_path: &Path) -> Self {
        Self {
            base: manifest_path.to_path_buf(),
            loaded: Vec::new(),
        }
    }

    fn get(&mut self, rel: &str) -> Result<ImageBuffer, HarnessError> {
        if let Some((_, img)) = self.loaded.iter().find(|(k, _)| k == rel) {
            return Ok(img.clone());
        }
        let img = ImageBuffer::read_png(&resolve(&self.base, rel))?;
        self.loaded.push((rel.to_string(), img.clone()));
        if self.loaded.len() > 3 {
            self.loaded.remove(0);
        }
        Ok(img)
    }

    pub(super) fn frame(&mut self, row: &ManifestRow) -> Result<ImageBuffer, HarnessError> {
        let next = self.get(&row.screen_png)?;
        let mut img = match &row.screen_prev_png {
            Some(p) => cross_dissolve(&self.get(p)?, &next, row.dissolve_alpha),
            None => next,
        };
        draw_target(&mut img, (row.target_px[0], row.target_px[1]));
        Ok(img)
    }
}

fn manifest_row(
    row: &ManifestRow,
    manifest_path: &Path,
    screens: &mut ScreenCache,
    opts: &ExtractOptions,
) -> Result<FeatureRow, HarnessError> {
    let screen = screens.frame(row)?;
    let thumb = make_thumbnail(&screen, opts.blur_sigma)
        .map_err(|e| HarnessError::Invalid(e.to_string()))?;
    let mut eyes = Vec::with_capacity(2);
    for (e, me) in row.eyes.iter().enumerate() {
        let img = ImageBuffer::read_png(&resolve(manifest_path, &me.frame_png))?;
        let f = extract_eye(&img, &me.iris_init, &thumb, opts.dump_masks.is_some());
        if let (Some(dir), Some(mask)) = (&opts.dump_masks, &f.mask) {
            let name = format!("p{:02}_s{}_{:05}_{}.hfg1", row.participant_id, row.session, row.frame_index, ["l", "r"][e]);
            mask.write_hfg1(&dir.join(name))?;
        }
        eyes.push(f);
    }
    let eyes: [EyeFeatures; 2] = eyes.try_into().unwrap();
    Ok(FeatureRow {
        participant: row.participant_id,
        session: row.session,
        frame: row.frame_index,
        path_id: row.path_id,
        gaze_px: (row.gaze_px[0], row.gaze_px[1]),
        brightness_class: BrightnessClass::from_mean_luma(screen.mean()),
        occluded_fraction: row.occluded_fraction,
        peak_scores: [eyes[0].peak_score, eyes[1].peak_score],
        degraded: eyes.iter().any(|e| e.iris.degraded),
        bundle: assemble(row.eye_bounds, &thumb, &eyes),
    })
}

// Placeholder features for a frame whose inputs could not be read.
fn unreadable_row(row: &ManifestRow) -> FeatureRow {
    let mut b = FeatureBundle::new(row.eye_bounds.map(|v| v as f32));
    b.eye_crops = Some([ImageBuffer::new(CROP_W, CROP_H, 1), ImageBuffer::new(CROP_W, CROP_H, 1)]);
    b.thumbnail = Some(ImageBuffer::new(crate::reflection::THUMB_W, crate::reflection::THUMB_H, 1));
    b.heatmaps = Some([FloatPlane::zeros(HEATMAP_W, HEATMAP_H), FloatPlane::zeros(HEATMAP_W, HEATMAP_H)]);
    FeatureRow {
        participant: row.participant_id,
        session: row.session,
        frame: row.frame_index,
        path_id: row.path_id,
        gaze_px: (row.gaze_px[0], row.gaze_px[1]),
        brightness_class: row.brightness_class,
        occluded_fraction: row.occluded_fraction,
        peak_scores: [0.0; 2],
        degraded: true,
        bundle: b,
    }
}

/// Runs the feature pipeline over a manifest. Frame-level failures are
/// logged and yield degraded rows.
pub fn extract_features(manifest_path: &Path, opts: &ExtractOptions) -> Result<Vec<FeatureRow>, HarnessError> {
    let manifest = Manifest::read(manifest_path)?;
    if let Some(dir) = &opts.dump_masks {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let rows: Vec<&ManifestRow> = manifest.rows.iter().filter(|r| !r.in_warmup && !r.blink).collect();
    // Sessions are processed in parallel; frames within one sequentially
    // so decoded screens can be reused.
    let mut groups: Vec<Vec<&ManifestRow>> = Vec::new();
    for r in rows {
        match groups.last_mut() {
            Some(g) if g[0].participant_id == r.participant_id && g[0].session == r.session => g.push(r),
            _ => groups.push(vec![r]),
        }
    }
    let out = super::with_pool(|| {
        groups
            .par_iter()
            .map(|g| {
                let mut screens = ScreenCache::new(manifest_path);
                g.iter()
                    .map(|r| {
                        manifest_row(r, manifest_path, &mut screens, opts).unwrap_or_else(|e| {
                            warn!("frame p{} s{} #{}: {e}", r.participant_id, r.session, r.frame_index);
                            unreadable_row(r)
                        })
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
    });
    Ok(out.into_iter().flatten().collect())
}

/// One line of `features.csv`.
#[derive(Debug, Serialize, Deserialize)]
struct CsvRecord {
    participant: usize,
    session: usize,
    frame: usize,
    path_id: usize,
    gaze_x: f64,
    gaze_y: f64,
    brightness: BrightnessClass,
    occluded_fraction: f64,
    eb0: f32,
    eb1: f32,
    eb2: f32,
    eb3: f32,
    v0: f32,
    v1: f32,
    v2: f32,
    v3: f32,
    mask_l: bool,
    mask_r: bool,
    peak_l: f64,
    peak_r: f64,
    degraded: bool,
    thumbnail: String,
    crop_l: String,
    crop_r: String,
    heatmap_l: String,
    heatmap_r: String,
}

pub const FEATURES_CSV: &str = "features.csv";

/// Writes `features.csv` plus per-frame plane files under `planes/`.
pub fn write_features(rows: &[FeatureRow], dir: &Path) -> Result<(), HarnessError> {
    let planes = dir.join("planes");
    fs::create_dir_all(&planes).map_err(io_err(&planes))?;
    let csv_path = dir.join(FEATURES_CSV);
    let csv_err = |e: csv::Error| HarnessError::Csv {
        path: csv_path.display().to_string(),
        msg: e.to_string(),
    };
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    for r in rows {
        let key = format!("p{:02}_s{}_{:05}", r.participant, r.session, r.frame);
        let b = &r.bundle;
        let rel = |s: &str| format!("planes/{key}_{s}");
        let (thumbnail, crop_l, crop_r) = (rel("thumb.png"), rel("crop_l.png"), rel("crop_r.png"));
        let (heatmap_l, heatmap_r) = (rel("hm_l.hfg1"), rel("hm_r.hfg1"));
        let missing = || HarnessError::Invalid(format!("row {key} lacks plane features"));
        b.thumbnail.as_ref().ok_or_else(missing)?.write_png(&dir.join(&thumbnail))?;
        let crops = b.eye_crops.as_ref().ok_or_else(missing)?;
        crops[0].write_png(&dir.join(&crop_l))?;
        crops[1].write_png(&dir.join(&crop_r))?;
        let hms = b.heatmaps.as_ref().ok_or_else(missing)?;
        hms[0].write_hfg1(&dir.join(&heatmap_l))?;
        hms[1].write_hfg1(&dir.join(&heatmap_r))?;
        let v = b.reflection_vectors;
        w.serialize(CsvRecord {
            participant: r.participant,
            session: r.session,
            frame: r.frame,
            path_id: r.path_id,
            gaze_x: r.gaze_px.0,
            gaze_y: r.gaze_px.1,
            brightness: r.brightness_class,
            occluded_fraction: r.occluded_fraction,
            eb0: b.eye_bounds[0],
            eb1: b.eye_bounds[1],
            eb2: b.eye_bounds[2],
            eb3: b.eye_bounds[3],
            v0: v[0],
            v1: v[1],
            v2: v[2],
            v3: v[3],
            mask_l: b.vector_mask[0],
            mask_r: b.vector_mask[1],
            peak_l: r.peak_scores[0],
            peak_r: r.peak_scores[1],
            degraded: r.degraded,
            thumbnail,
            crop_l,
            crop_r,
            heatmap_l,
            heatmap_r,
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&csv_path))
}

/// Loads rows written by [`write_features`].
pub fn read_features(dir: &Path) -> Result<Vec<FeatureRow>, HarnessError> {
    let csv_path = dir.join(FEATURES_CSV);
    let csv_err = |e: csv::Error| HarnessError::Csv {
        path: csv_path.display().to_string(),
        msg: e.to_string(),
    };
    let mut rd = csv::Reader::from_path(&csv_path).map_err(csv_err)?;
    let mut rows = Vec::new();
    for rec in rd.deserialize() {
        let r: CsvRecord = rec.map_err(csv_err)?;
        let mut b = FeatureBundle::new([r.eb0, r.eb1, r.eb2, r.eb3]);
        b.reflection_vectors = [r.v0, r.v1, r.v2, r.v3];
        b.vector_mask = [r.mask_l, r.mask_r];
        b.thumbnail = Some(ImageBuffer::read_png(&dir.join(&r.thumbnail))?);
        b.eye_crops = Some([
            ImageBuffer::read_png(&dir.join(&r.crop_l))?,
            ImageBuffer::read_png(&dir.join(&r.crop_r))?,
        ]);
        b.heatmaps = Some([
            FloatPlane::read_hfg1(&dir.join(&r.heatmap_l))?,
            FloatPlane::read_hfg1(&dir.join(&r.heatmap_r))?,
        ]);
        rows.push(FeatureRow {
            participant: r.participant,
            session: r.session,
            frame: r.frame,
            path_id: r.path_id,
            gaze_px: (r.gaze_x, r.gaze_y),
            brightness_class: r.brightness,
            occluded_fraction: r.occluded_fraction,
            peak_scores: [r.peak_l, r.peak_r],
            degraded: r.degraded,
            bundle: b,
        });
    }
    Ok(rows)
}

pub const FEATURES_META: &str = "meta.json";

/// Corpus-level facts stored next to `features.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesMeta {
    pub camera: CameraPosition,
    pub rows: usize,
}

impl FeaturesMeta {
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        let p = dir.join(FEATURES_META);
        fs::write(&p, serde_json::to_string_pretty(self).expect("meta serializes")).map_err(io_err(&p))
    }

    pub fn read(dir: &Path) -> Result<Self, HarnessError> {
        let p = dir.join(FEATURES_META);
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Invalid(format!("{}: {e}", p.display())))
    }
}
