use std::path::PathBuf;

/// Crate-wide error type. Variants mirror the failure modes of the individual
/// subsystems rather than wrapping them in per-module enums.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file missing: {0}")]
    FileMissing(PathBuf),

    #[error("decode error: {0}")]
    DecodeError(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("shape error: {0}")]
    ShapeError(String),

    #[error("manifest schema error: {0}")]
    SchemaError(String),

    #[error("invalid forgery kind: {0}")]
    InvalidKind(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("{0} does not divide {1}")]
    DivisibilityError(usize, usize),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("codec hash mismatch: checkpoint records {expected}, loaded weights hash to {actual}")]
    CodecHashMismatch { expected: String, actual: String },

    #[error("image codec error: {0}")]
    CodecError(String),

    #[error("resize target too small: {0}")]
    TooSmall(String),

    #[error("checkpoint error: {0}")]
    CheckpointError(String),

    #[error("config error: {0}")]
    ConfigError(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
