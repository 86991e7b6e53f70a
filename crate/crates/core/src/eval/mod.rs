//! Displacement metrics, baselines, report emission and ablation variants.

mod ablation;
mod baselines;
mod metrics;
mod report;

pub use ablation::{sweep_variants, Sweep, Variant};
pub use baselines::{constant_position, cvh_baseline, ConstantPosition, Cvh, ModelPredictor, Oracle, Predictor};
pub use metrics::{ade, ade_2d, fde, fde_2d, to_2d_normalized};
pub use report::{evaluate, summary_csv, trajectory_svg, Aggregate, MetricReport, SequenceMetrics, CSV_HEADER};

use crate::data::DataError;
use crate::diffusion::DiffusionError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("prediction has {pred} waypoints, ground truth {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("metric over an empty trajectory")]
    Empty,
    #[error("constant velocity needs at least 2 past waypoints, got {got}")]
    TooShort { got: usize },
    #[error("{what}: expected {expected}, got {got}")]
    Count {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}
