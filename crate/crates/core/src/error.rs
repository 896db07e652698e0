use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FedQuadError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FedQuadError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("label {label} at index {index} is out of range for {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot form a quadruplet: {0}")]
    UnsatisfiableQuadruplet(String),

    #[error("partitioning failed: {0}")]
    Partition(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("graph state error: {0}")]
    State(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),
}

impl FedQuadError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FedQuadError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failure during
    /// computation. The CLI maps these to a distinct exit code.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            FedQuadError::Config(_) | FedQuadError::Parse { .. } | FedQuadError::Validation(_)
        )
    }
}
