//! Privacy and utility measurements.

mod distribution;
mod information;
mod report;
mod signal;
mod tracking;

use thiserror::Error;

pub use distribution::{kl_divergence, loss_rate, stat_loss, Histogram, DEFAULT_BINS, DEFAULT_KL_SMOOTHING};
pub use information::{
    cm, dm, info_loss_generalization, lm, ml_lc, pattern_metrics, AttributeNode, AttributeTree, Constraint, GeneralizationScheme,
    LossMetric, PatternCounts, PatternMetrics,
};
pub use report::{compare_detections, format_value, CompareOptions, MetricEntry, MetricReport, METRIC_NAMES};
pub use signal::{mse_psnr_rmse, psnr, SignalQuality};
pub use tracking::{evaluate_tracks, retrieval_frequency, retrieval_rate, EvalParams, Probe, TrackingEval};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("histograms use different bin layouts")]
    BinMismatch,
    #[error("no data")]
    Empty,
    #[error("{0}")]
    InvalidArgument(String),
}
