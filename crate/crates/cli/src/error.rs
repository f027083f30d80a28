use std::fmt;

use thiserror::Error;
use upet::data::DataError;
use upet::model::ModelError;
use upet::training::{CheckpointError, TrainError};
use upet::TensorError;

/// Failure classes and their process exit codes. The numbering is stable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// A bug: something the library guarantees did not hold.
    Internal = 1,
    // 2 is clap's usage error.
    Config = 3,
    Io = 4,
    Data = 5,
    Checkpoint = 6,
    Fingerprint = 7,
    NoAttention = 8,
    GradCheckFailed = 9,
    PrecisionRefused = 10,
    NonFinite = 11,
    Input = 12,
}

impl Kind {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Error)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl fmt::Display for CliError {
    /// Always a single line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = self
            .message
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty());
        if let Some(first) = parts.next() {
            f.write_str(first)?;
        }
        for p in parts {
            write!(f, "; {p}")?;
        }
        Ok(())
    }
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Kind::Config, message)
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self::new(Kind::Io, format!("{}: {e}", path.display()))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let kind = match e {
            DataError::Io { .. } => Kind::Io,
            DataError::Format(_) | DataError::Invalid(_) => Kind::Data,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let kind = match e {
            ModelError::Config(_) | ModelError::NoSuchMap(_) => Kind::Config,
            ModelError::InputShape { .. } => Kind::Input,
            ModelError::NoAttention => Kind::NoAttention,
            ModelError::Tensor(_) => Kind::Internal,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        let kind = match e {
            TensorError::PrecisionRefused { .. } => Kind::PrecisionRefused,
            _ => Kind::Internal,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        let kind = match e {
            CheckpointError::Io { .. } => Kind::Io,
            CheckpointError::Fingerprint { .. } => Kind::Fingerprint,
            CheckpointError::CorruptIndex(_)
            | CheckpointError::PayloadSize { .. }
            | CheckpointError::ShapeMismatch { .. } => Kind::Checkpoint,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(e) => e.into(),
            TrainError::Data(e) => e.into(),
            TrainError::Tensor(e) => e.into(),
            TrainError::Checkpoint(e) => e.into(),
            TrainError::Metric(e) => Self::new(Kind::Data, e.to_string()),
            TrainError::Config(m) => Self::config(format!("invalid training configuration: {m}")),
            e @ TrainError::EmptySplit(_) => Self::new(Kind::Data, e.to_string()),
            e @ (TrainError::NonFinite { .. } | TrainError::NonFiniteGradient { .. }) => {
                Self::new(Kind::NonFinite, e.to_string())
            }
            e @ TrainError::MissingGradient(_) => Self::new(Kind::Internal, e.to_string()),
            e @ TrainError::Io { .. } => Self::new(Kind::Io, e.to_string()),
        }
    }
}
