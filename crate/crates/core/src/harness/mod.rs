//! Corpus orchestration: feature extraction, leave-one-participant-out
//! evaluation, report assembly, benchmarks and plots.

pub mod bench;
pub mod eval;
pub mod features;
pub mod plot;
pub mod report;

use thiserror::Error;

use crate::imaging::ImageError;
use crate::regressor::RegressorError;
use crate::simulator::dataset::DatasetError;

pub use bench::{bench, BenchReport, StageTiming, STAGES};
pub use eval::{
    brightness_split, centroid_baseline, error_metrics, loocv_eval, masked_rates, spatial_heatmap, BrightnessSplit, ErrorMetrics,
    EvalConfig, FoldPredictions, SpatialGrid, GRID_COLS, GRID_ROWS, PX_PER_CM,
};
pub use features::{
    extract_eye, extract_features, extract_simulated, eye_crop, read_features, write_features, ExtractOptions,
    EyeFeatures, FeatureRow, FeaturesMeta, FEATURES_CSV,
};
pub use plot::{write_plots, PLOT_FILES};
pub use report::{build_report, EvalReport, ParticipantError, ReportSet, REPORT_SCHEMA};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Csv { path: String, msg: String },
    #[error("predictions and truths differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 participants, found {0}")]
    TooFewParticipants(usize),
    #[error("no {0} frames in the evaluated rows")]
    MissingClass(&'static str),
    #[error("{0}")]
    Invalid(String),
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Worker count from `HIFIGAZE_THREADS`, defaulting to the available cores.
pub fn thread_count() -> usize {
    std::env::var("HIFIGAZE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` inside a pool capped at [`thread_count`] workers.
pub fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(thread_count()).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
