//! Training objective and evaluation metrics.

mod loss;
mod metrics;

use thiserror::Error;

pub use loss::{combined_loss, cross_entropy, masked_l1, LossBreakdown, LossTerms};
pub use metrics::{accuracy, auc_ovr, confusion, f1_macro, mae_volumes, per_class_f1, EvalReport};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric needs at least one sample")]
    Empty,
    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("class index {0} out of range (3 classes)")]
    ClassOutOfRange(usize),
    #[error("volume shapes differ: {left:?} vs {right:?}")]
    ShapeMismatch { left: [usize; 3], right: [usize; 3] },
    #[error("score row {row} has {len} entries, expected 3")]
    ScoreWidth { row: usize, len: usize },
}
