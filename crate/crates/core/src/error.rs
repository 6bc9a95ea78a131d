//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("width multiplier must be >= 1")]
    InvalidMultiplier,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite gradient at layer {layer} step {step}")]
    NanGradient { layer: usize, step: u64 },
    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: u64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    CheckpointVersion { expected: u32, found: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("csv parse error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
