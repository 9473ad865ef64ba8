use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CpcdError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CpcdError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("element count {len} does not match shape {shape:?}")]
    BadElementCount { shape: Vec<usize>, len: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("backward requires a scalar root, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("row {row} has norm {norm:e}, cannot normalize")]
    ZeroRow { row: usize, norm: f64 },

    #[error("expected unit-norm inputs, got norms {0:?}")]
    NotUnit(Vec<f64>),

    #[error("index {index} out of range 0..{len}")]
    OutOfRange { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("stratification impossible: {0}")]
    Stratification(String),

    #[error("training halted: {0}")]
    TrainingHalted(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CpcdError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        CpcdError::InvalidConfig(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        CpcdError::InvalidInput(msg.into())
    }

    /// Whether the error stems from rejected input or configuration rather
    /// than a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            CpcdError::Io(_) | CpcdError::TrainingHalted(_) | CpcdError::NonFinite(_)
        )
    }
}
