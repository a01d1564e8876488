use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::eval::{euclid, masked_rates, ErrorMetrics, FoldPredictions, PX_PER_CM};
use super::{brightness_split, centroid_baseline, spatial_heatmap, BrightnessSplit, FeatureRow, HarnessError, SpatialGrid};
use crate::regressor::TrainConfig;

pub const REPORT_SCHEMA: &str = "hifigaze-report-1";
pub const ZSCORE_METHOD: &str = "per-participant variant means, population sd across variants";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantError {
    pub participant: usize,
    pub n: usize,
    pub mean_px: f64,
    pub mean_cm: f64,
    pub median_px: f64,
    pub median_cm: f64,
    /// Within-participant z-score of `mean_px` across the report's variants.
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub camera: String,
    pub total_rows: usize,
    pub evaluated_rows: usize,
    pub masked_rows: usize,
    pub evaluated_fraction: f64,
    /// Share of all rows with at least one masked reflection vector.
    pub masked_vector_rate: f64,
    pub pooled: ErrorMetrics,
    pub participants: Vec<ParticipantError>,
    pub mean_z: Option<f64>,
    /// Errors over evaluated rows; masked rates over all rows.
    pub brightness: Option<BrightnessSplit>,
    pub spatial: SpatialGrid,
    pub final_train_loss_px: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSet {
    pub schema: String,
    pub camera: String,
    pub px_per_cm: f64,
    pub zscore_method: String,
    pub n_rows: usize,
    pub n_participants: usize,
    pub train: TrainConfig,
    pub baseline_centroid: ErrorMetrics,
    pub variants: Vec<EvalReport>,
}

impl ReportSet {
    pub fn variant(&self, id: &str) -> Option<&EvalReport> {
        self.variants.iter().find(|r| r.variant == id)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Assembles per-variant reports and within-participant z-scores.
pub fn build_report(
    rows: &[FeatureRow],
    camera: &str,
    evals: &[FoldPredictions],
    train: &TrainConfig,
) -> Result<ReportSet, HarnessError> {
    let masked_any = rows.iter().filter(|r| !r.bundle.both_vectors_present()).count();
    let masked_vector_rate = masked_any as f64 / rows.len().max(1) as f64;
    let rates = masked_rates(rows);
    let mut reports = Vec::new();
    for ev in evals {
        let sel: Vec<&FeatureRow> = ev.rows.iter().map(|&i| &rows[i]).collect();
        let errs: Vec<f64> = sel.iter().zip(&ev.preds).map(|(r, &p)| euclid(p, r.gaze_px)).collect();
        let mut by_p: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (r, &e) in sel.iter().zip(&errs) {
            by_p.entry(r.participant).or_default().push(e);
        }
        let participants = by_p
            .iter()
            .map(|(&p, e)| {
                let m = ErrorMetrics::from_errors(e)?;
                Ok(ParticipantError {
                    participant: p,
                    n: m.n,
                    mean_px: m.mean_px,
                    mean_cm: m.mean_cm,
                    median_px: m.median_px,
                    median_cm: m.median_cm,
                    z: None,
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        let gaze: Vec<(f64, f64)> = sel.iter().map(|r| r.gaze_px).collect();
        reports.push(EvalReport {
            variant: ev.variant.id(),
            camera: camera.to_string(),
            total_rows: ev.total_rows,
            evaluated_rows: ev.rows.len(),
            masked_rows: ev.masked_rows,
            evaluated_fraction: ev.rows.len() as f64 / ev.total_rows.max(1) as f64,
            masked_vector_rate,
            pooled: ErrorMetrics::from_errors(&errs)?,
            participants,
            mean_z: None,
            brightness: brightness_split(&sel, &ev.preds).ok().map(|mut b| {
                (b.masked_rate_bright, b.masked_rate_dark) = rates;
                b
            }),
            spatial: spatial_heatmap(&gaze, &errs),
            final_train_loss_px: ev.histories.iter().filter_map(|h| h.epoch_loss.last().copied()).collect(),
        });
    }
    apply_zscores(&mut reports);
    let base = centroid_baseline(rows)?;
    let truths: Vec<(f64, f64)> = rows.iter().map(|r| r.gaze_px).collect();
    let n_participants = rows.iter().map(|r| r.participant).collect::<std::collections::BTreeSet<_>>().len();
    Ok(ReportSet {
        schema: REPORT_SCHEMA.into(),
        camera: camera.into(),
        px_per_cm: PX_PER_CM,
        zscore_method: ZSCORE_METHOD.into(),
        n_rows: rows.len(),
        n_participants,
        train: *train,
        baseline_centroid: super::error_metrics(&base, &truths)?,
        variants: reports,
    })
}

fn apply_zscores(reports: &mut [EvalReport]) {
    if reports.len() < 2 {
        return;
    }
    let mut ids: Vec<usize> = reports.iter().flat_map(|r| r.participants.iter().map(|p| p.participant)).collect();
    ids.sort_unstable();
    ids.dedup();
    for pid in ids {
        let slots: Vec<(usize, usize)> = reports
            .iter()
            .enumerate()
            .filter_map(|(ri, r)| r.participants.iter().position(|p| p.participant == pid).map(|pi| (ri, pi)))
            .collect();
        if slots.len() < 2 {
            continue;
        }
        let vals: Vec<f64> = slots.iter().map(|&(ri, pi)| reports[ri].participants[pi].mean_px).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        for (&(ri, pi), v) in slots.iter().zip(&vals) {
            reports[ri].participants[pi].z = Some(if sd > 0.0 { (v - mean) / sd } else { 0.0 });
        }
    }
    for r in reports.iter_mut() {
        let zs: Vec<f64> = r.participants.iter().filter_map(|p| p.z).collect();
        r.mean_z = (!zs.is_empty()).then(|| zs.iter().sum::<f64>() / zs.len() as f64);
    }
}
