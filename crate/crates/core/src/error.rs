use thiserror::Error;

use crate::tensor::Shape;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("backward requires a scalar root, got shape {0}")]
    NonScalarRoot(Shape),

    #[error("spatial size {height}x{width} is not divisible by 2 at level {level}")]
    IndivisibleLevel {
        level: usize,
        height: usize,
        width: usize,
    },

    #[error("degenerate stain estimate: {0}")]
    DegenerateStain(String),

    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        op,
        reason: reason.into(),
    }
}
