//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file exists but its contents do not parse under the declared format.
    #[error("failed to load {path}: {detail}")]
    Load { path: PathBuf, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Two objects are bound to different codebooks and cannot be compared.
    #[error("not comparable: {0}")]
    Comparability(String),

    /// A persisted artifact is corrupt (truncated, bad magic, hash mismatch).
    #[error("integrity check failed for {path}: {detail}")]
    Integrity { path: PathBuf, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    /// Tied values in the reference ranking of the weighted rank correlation.
    #[error("ties unsupported: {0}")]
    UnsupportedTies(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}

impl Error {
    pub(crate) fn load(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn integrity(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Integrity {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
