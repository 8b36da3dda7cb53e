//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by game construction, solving, and checking.
#[derive(Debug, Error)]
pub enum DgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("operation requires an agent-decoupled game")]
    NotDecoupled,

    #[error("agent index {0} out of range")]
    AgentIndexOutOfRange(usize),

    #[error("initial state is inside the target")]
    PointInTarget,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("incompatible fields: {0}")]
    Incompatible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DgError>;
