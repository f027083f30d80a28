use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {shape:?}: extents must be positive")]
    InvalidShape { shape: Vec<usize> },

    #[error("shape {shape:?} needs {expected} elements, got {actual}")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("{op}: {dim} mismatch ({left} vs {right})")]
    DimMismatch {
        op: &'static str,
        dim: &'static str,
        left: usize,
        right: usize,
    },

    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Incompatible {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: {axis} extent {extent} is odd")]
    OddExtent {
        op: &'static str,
        axis: &'static str,
        extent: usize,
    },

    #[error("{op}: kernel {kernel} exceeds padded {axis} extent {padded}")]
    KernelTooLarge {
        op: &'static str,
        axis: &'static str,
        kernel: usize,
        padded: usize,
    },

    #[error("expected a single-element tensor, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("backward called twice on the same tape")]
    BackwardTwice,

    #[error("label {label} at row {row} is outside 0..{classes}")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("function is not deterministic: two evaluations differ ({first} vs {second})")]
    NonDeterministic { first: f64, second: f64 },

    #[error("gradient checking requires 64-bit precision, got {bits}-bit")]
    PrecisionRefused { bits: u32 },

    #[error("{0}")]
    Invalid(String),
}
