use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the selection and training pipeline.
#[derive(Debug, Error)]
pub enum CssError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("config key `{key}` out of range: {constraint}")]
    OutOfRange { key: String, constraint: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate mixture fit: {0}")]
    DegenerateFit(String),

    #[error("auxiliary model coverage: class {0} has no pretraining samples")]
    Coverage(usize),

    #[error("training diverged in {phase} (epoch {epoch}, batch {batch}): {detail}")]
    Divergence {
        phase: String,
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("AUC undefined: truth contains only one class")]
    UndefinedAuc,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

pub type Result<T> = std::result::Result<T, CssError>;

impl CssError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CssError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        CssError::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
