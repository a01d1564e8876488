use std::collections::BTreeSet;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureRow, HarnessError};
use crate::regressor::{train, FeatureBundle, History, TrainConfig, VariantSpec};
use crate::simulator::{derive_seed, gen_trajectory, BrightnessClass, DEFAULT_FPS, SCREEN_DIMS};

/// Pixels per centimetre: 100 px/s corresponds to 1.65 cm/s.
pub const PX_PER_CM: f64 = 100.0 / 1.65;
pub const GRID_COLS: usize = 9;
pub const GRID_ROWS: usize = 5;
const PREDICT_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub n: usize,
    pub mean_px: f64,
    pub mean_cm: f64,
    pub median_px: f64,
    pub median_cm: f64,
    pub sd_px: f64,
    pub sd_cm: f64,
}

impl ErrorMetrics {
    pub fn from_errors(errors: &[f64]) -> Result<Self, HarnessError> {
        if errors.is_empty() {
            return Err(HarnessError::Invalid("no errors to summarize".into()));
        }
        let n = errors.len();
        let mean = errors.iter().sum::<f64>() / n as f64;
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let sd = if n > 1 {
            (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            n,
            mean_px: mean,
            mean_cm: mean / PX_PER_CM,
            median_px: median,
            median_cm: median / PX_PER_CM,
            sd_px: sd,
            sd_cm: sd / PX_PER_CM,
        })
    }
}

pub fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Mean, median and sample standard deviation of Euclidean errors.
pub fn error_metrics(preds: &[(f64, f64)], truths: &[(f64, f64)]) -> Result<ErrorMetrics, HarnessError> {
    if preds.len() != truths.len() {
        return Err(HarnessError::LengthMismatch(preds.len(), truths.len()));
    }
    let errs: Vec<f64> = preds.iter().zip(truths).map(|(&p, &t)| euclid(p, t)).collect();
    ErrorMetrics::from_errors(&errs)
}

/// Mean error binned over the trajectory's bounding box; `mean_px[row][col]`
/// with row 0 at the top, `None` for empty bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub cols: usize,
    pub rows: usize,
    /// `[x0, y0, x1, y1]` in screen pixels.
    pub bounds: [f64; 4],
    pub mean_px: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<usize>>,
}

impl SpatialGrid {
    pub fn populated(&self) -> usize {
        self.counts.iter().flatten().filter(|&&c| c > 0).count()
    }

    /// Mean over the populated bins of one grid row.
    pub fn row_mean(&self, row: usize) -> Option<f64> {
        let v: Vec<f64> = self.mean_px[row].iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn trajectory_bounds() -> [f64; 4] {
    static B: OnceLock<[f64; 4]> = OnceLock::new();
    *B.get_or_init(|| {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for s in gen_trajectory(SCREEN_DIMS, DEFAULT_FPS) {
            b[0] = b[0].min(s.gaze_px.0);
            b[1] = b[1].min(s.gaze_px.1);
            b[2] = b[2].max(s.gaze_px.0);
            b[3] = b[3].max(s.gaze_px.1);
        }
        b
    })
}

fn bin(v: f64, lo: f64, hi: f64, n: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * n as f64).floor().max(0.0) as usize).min(n - 1)
}

pub fn spatial_heatmap(gaze: &[(f64, f64)], errors: &[f64]) -> SpatialGrid {
    assert_eq!(gaze.len(), errors.len());
    let bounds = trajectory_bounds();
    let mut sum = vec![vec![0.0; GRID_COLS]; GRID_ROWS];
    let mut counts = vec![vec![0usize; GRID_COLS]; GRID_ROWS];
    for (&(x, y), &e) in gaze.iter().zip(errors) {
        let c = bin(x, bounds[0], bounds[2], GRID_COLS);
        let r = bin(y, bounds[1], bounds[3], GRID_ROWS);
        sum[r][c] += e;
        counts[r][c] += 1;
    }
    let mean_px = sum
        .iter()
        .zip(&counts)
        .map(|(s, c)| s.iter().zip(c).map(|(&s, &c)| (c > 0).then(|| s / c as f64)).collect())
        .collect();
    SpatialGrid {
        cols: GRID_COLS,
        rows: GRID_ROWS,
        bounds,
        mean_px,
        counts,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrightnessSplit {
    pub bright: ErrorMetrics,
    pub dark: ErrorMetrics,
    /// Share of the class's rows with at least one masked reflection vector.
    pub masked_rate_bright: f64,
    pub masked_rate_dark: f64,
}

/// Masked-vector rates of the bright and dark rows.
pub fn masked_rates(rows: &[FeatureRow]) -> (f64, f64) {
    let rate = |class| {
        let of: Vec<_> = rows.iter().filter(|r| r.brightness_class == class).collect();
        let m = of.iter().filter(|r| !r.bundle.both_vectors_present()).count();
        m as f64 / of.len().max(1) as f64
    };
    (rate(BrightnessClass::Bright), rate(BrightnessClass::Dark))
}

pub fn brightness_split(rows: &[&FeatureRow], preds: &[(f64, f64)]) -> Result<BrightnessSplit, HarnessError> {
    if rows.len() != preds.len() {
        return Err(HarnessError::LengthMismatch(preds.len(), rows.len()));
    }
    let part = |class: BrightnessClass| -> (Vec<f64>, usize) {
        let mut errs = Vec::new();
        let mut masked = 0;
        for (r, &p) in rows.iter().zip(preds) {
            if r.brightness_class == class {
                errs.push(euclid(p, r.gaze_px));
                masked += usize::from(!r.bundle.both_vectors_present());
            }
        }
        (errs, masked)
    };
    let (be, bm) = part(BrightnessClass::Bright);
    let (de, dm) = part(BrightnessClass::Dark);
    if be.is_empty() {
        return Err(HarnessError::MissingClass("bright"));
    }
    if de.is_empty() {
        return Err(HarnessError::MissingClass("dark"));
    }
    Ok(BrightnessSplit {
        masked_rate_bright: bm as f64 / be.len() as f64,
        masked_rate_dark: dm as f64 / de.len() as f64,
        bright: ErrorMetrics::from_errors(&be)?,
        dark: ErrorMetrics::from_errors(&de)?,
    })
}

#[derive(Debug, Clone, Default)]
pub struct EvalConfig {
    pub train: TrainConfig,
}

/// Held-out predictions of a leave-one-participant-out run.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPredictions {
    pub variant: VariantSpec,
    pub participants: Vec<usize>,
    /// Indices into the input rows that were evaluated, ascending.
    pub rows: Vec<usize>,
    pub preds: Vec<(f64, f64)>,
    pub total_rows: usize,
    /// Rows left out because a reflection vector was masked.
    pub masked_rows: usize,
    /// Training history per fold, in `participants` order.
    pub histories: Vec<History>,
}

fn participants_of(rows: &[FeatureRow]) -> Result<Vec<usize>, HarnessError> {
    let ps: Vec<usize> = rows.iter().map(|r| r.participant).collect::<BTreeSet<_>>().into_iter().collect();
    if ps.len() < 2 {
        return Err(HarnessError::TooFewParticipants(ps.len()));
    }
    Ok(ps)
}

/// Rows scored for `variant`: vector variants only where both eyes'
/// vectors are present.
pub fn evaluated(row: &FeatureRow, variant: &VariantSpec) -> bool {
    !variant.use_vector || row.bundle.both_vectors_present()
}

/// Trains one model per held-out participant on all other participants.
pub fn loocv_eval(rows: &[FeatureRow], variant: VariantSpec, cfg: &EvalConfig) -> Result<FoldPredictions, HarnessError> {
    let ps = participants_of(rows)?;
    let folds: Vec<Result<(Vec<(usize, (f64, f64))>, History), HarnessError>> = super::with_pool(|| {
        ps.par_iter()
            .map(|&p| {
                let train_rows: Vec<&FeatureRow> = rows.iter().filter(|r| r.participant != p).collect();
                let data: Vec<&FeatureBundle> = train_rows.iter().map(|r| &r.bundle).collect();
                let truth: Vec<(f64, f64)> = train_rows.iter().map(|r| r.gaze_px).collect();
                let tcfg = TrainConfig {
                    seed: derive_seed(cfg.train.seed, &[p as u64]),
                    ..cfg.train
                };
                let (model, hist) = train(&data, &truth, variant, &tcfg)?;
                let test: Vec<usize> = (0..rows.len())
                    .filter(|&i| rows[i].participant == p && evaluated(&rows[i], &variant))
                    .collect();
                let mut out = Vec::with_capacity(test.len());
                for chunk in test.chunks(PREDICT_BATCH) {
                    let batch: Vec<&FeatureBundle> = chunk.iter().map(|&i| &rows[i].bundle).collect();
                    let pred = model.predict_batch(&batch)?;
                    out.extend(chunk.iter().copied().zip(pred));
                }
                Ok((out, hist))
            })
            .collect()
    });
    let mut all = Vec::new();
    let mut histories = Vec::new();
    for f in folds {
        let (preds, h) = f?;
        all.extend(preds);
        histories.push(h);
    }
    all.sort_by_key(|&(i, _)| i);
    let masked_rows = rows.len() - all.len();
    Ok(FoldPredictions {
        variant,
        participants: ps,
        rows: all.iter().map(|&(i, _)| i).collect(),
        preds: all.iter().map(|&(_, p)| p).collect(),
        total_rows: rows.len(),
        masked_rows,
        histories,
    })
}

/// Predicts, for every row, the mean gaze of the other participants.
pub fn centroid_baseline(rows: &[FeatureRow]) -> Result<Vec<(f64, f64)>, HarnessError> {
    let ps = participants_of(rows)?;
    let mut out = vec![(0.0, 0.0); rows.len()];
    for p in ps {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for r in rows.iter().filter(|r| r.participant != p) {
            sx += r.gaze_px.0;
            sy += r.gaze_px.1;
            n += 1;
        }
        let c = (sx / n as f64, sy / n as f64);
        for (i, r) in rows.iter().enumerate() {
            if r.participant == p {
                out[i] = c;
            }
        }
    }
    Ok(out)
}
