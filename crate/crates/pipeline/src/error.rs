use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Core(#[from] uvnet_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),

    /// A manifest entry failed validation; `entry` is its 0-based index.
    #[error("manifest entry {entry}: {reason}")]
    Manifest { entry: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty {0} set")]
    EmptyDataset(&'static str),

    #[error("loss diverged (non-finite) at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("checkpoint does not fit the data: {0}")]
    Mismatch(String),
}

impl PipelineError {
    /// Short stable identifier used in the machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Core(_) => "core",
            PipelineError::Io { .. } => "io",
            PipelineError::Json { .. } => "json",
            PipelineError::Image { .. } => "image",
            PipelineError::Csv(_) => "csv",
            PipelineError::Manifest { .. } => "manifest",
            PipelineError::Config(_) => "config",
            PipelineError::EmptyDataset(_) => "empty_dataset",
            PipelineError::Divergence { .. } => "divergence",
            PipelineError::Mismatch(_) => "mismatch",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        PipelineError::Json {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
