//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, surgery, optimization and
/// persistence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("freeze pattern '{0}' matches no parameter")]
    FreezePatternUnmatched(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("basis digest {basis} does not match model digest {model}")]
    BasisModelMismatch { basis: String, model: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint digest mismatch (stored {stored}, computed {computed})")]
    DigestMismatch { stored: String, computed: String },

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("unknown registry tag '{0}'")]
    UnknownTag(String),

    #[error("image decode error: {0}")]
    ImageDecode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
