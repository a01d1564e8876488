use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::features::{eye_crop, ScreenCache};
use super::HarnessError;
use crate::imaging::ImageBuffer;
use crate::iris::{locate_iris_with, LocateConfig};
use crate::reflection::{make_thumbnail, multiscale_match, reflection_vector, DEFAULT_BLUR_SIGMA};
use crate::regressor::{predict, FeatureBundle, ModelParams, VariantSpec};
use crate::simulator::dataset::{resolve, Manifest};

pub const MIN_BENCH_FRAMES: usize = 20;
pub const STAGES: [&str; 4] = ["iris", "thumbnail", "match", "inference"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    /// Timed calls: per eye for iris and match, per frame otherwise.
    pub count: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub frames: usize,
    pub variant: String,
    pub stages: Vec<StageTiming>,
    pub templates_evaluated: usize,
    pub templates_per_eye: f64,
}

impl BenchReport {
    pub fn stage(&self, name: &str) -> Option<&StageTiming> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

fn timing(stage: &str, mut ms: Vec<f64>) -> StageTiming {
    ms.sort_by(f64::total_cmp);
    StageTiming {
        stage: stage.into(),
        count: ms.len(),
        median_ms: quantile(&ms, 0.5),
        p95_ms: quantile(&ms, 0.95),
    }
}

fn timed<R>(acc: &mut Vec<f64>, f: impl FnOnce() -> R) -> R {
    let t = Instant::now();
    let r = f();
    acc.push(t.elapsed().as_secs_f64() * 1e3);
    r
}

/// Times the per-frame stages single-threaded over the first `frames`
/// usable rows of a manifest. Without a model, a freshly initialised
/// full-feature network stands in for inference.
pub fn bench(manifest_path: &Path, frames: usize, model: Option<&ModelParams<f32>>) -> Result<BenchReport, HarnessError> {
    if frames < MIN_BENCH_FRAMES {
        return Err(HarnessError::Invalid(format!("bench needs at least {MIN_BENCH_FRAMES} frames, got {frames}")));
    }
    let manifest = Manifest::read(manifest_path)?;
    let rows: Vec<_> = manifest.rows.iter().filter(|r| !r.in_warmup && !r.blink).take(frames).collect();
    if rows.len() < MIN_BENCH_FRAMES {
        return Err(HarnessError::Invalid(format!(
            "manifest has {} usable frames, need {MIN_BENCH_FRAMES}",
            rows.len()
        )));
    }
    let fallback;
    let model = match model {
        Some(m) => m,
        None => {
            fallback = ModelParams::<f32>::init(VariantSpec::ALL[7], 0);
            &fallback
        }
    };
    let cfg = LocateConfig::default();
    let mut screens = ScreenCache::new(manifest_path);
    let (mut t_iris, mut t_thumb, mut t_match, mut t_inf) = (vec![], vec![], vec![], vec![]);
    let mut templates = 0;
    for row in &rows {
        let screen = screens.frame(row)?;
        let thumb = timed(&mut t_thumb, || make_thumbnail(&screen, DEFAULT_BLUR_SIGMA))
            .map_err(|e| HarnessError::Invalid(e.to_string()))?;
        let mut bundle = FeatureBundle::new(row.eye_bounds.map(|v| v as f32));
        let mut crops = Vec::new();
        let mut heatmaps = Vec::new();
        for (e, me) in row.eyes.iter().enumerate() {
            let img = ImageBuffer::read_png(&resolve(manifest_path, &me.frame_png))?;
            let circle = timed(&mut t_iris, || locate_iris_with(&img, &me.iris_init, &cfg))
                .map(|(f, _)| f.circle)
                .unwrap_or_else(|_| me.iris_init.as_circle());
            let m = timed(&mut t_match, || multiscale_match(&img, &circle, &thumb));
            templates += m.templates_evaluated;
            let v = reflection_vector(&circle, &m);
            bundle.set_vector(e, (!v.mask).then_some(v.v));
            crops.push(eye_crop(&img, &circle));
            heatmaps.push(m.heatmap);
        }
        bundle.eye_crops = crops.try_into().ok();
        bundle.heatmaps = heatmaps.try_into().ok();
        bundle.thumbnail = Some(thumb.image);
        timed(&mut t_inf, || predict(model, &bundle))?;
    }
    let eyes = 2 * rows.len();
    Ok(BenchReport {
        frames: rows.len(),
        variant: model.variant.id(),
        stages: vec![
            timing(STAGES[0], t_iris),
            timing(STAGES[1], t_thumb),
            timing(STAGES[2], t_match),
            timing(STAGES[3], t_inf),
        ],
        templates_evaluated: templates,
        templates_per_eye: templates as f64 / eyes as f64,
    })
}
