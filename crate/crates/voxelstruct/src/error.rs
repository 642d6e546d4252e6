use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up for an operation.
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A configuration is internally inconsistent (non-integral conv output,
    /// indivisible pooling window, invalid fraction, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value was produced where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Dataset problems: missing annotations, bad manifest, empty splits.
    #[error("data error: {0}")]
    Data(String),

    /// Checkpoint file problems: bad magic, truncated payload, key-set mismatch.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Two artifacts built from different configurations were combined.
    #[error("config hash mismatch: {0}")]
    ConfigHashMismatch(String),

    /// Training diverged (NaN loss); the last good checkpoint, if any, is retained.
    #[error("training diverged at step {step}{}", last_checkpoint.as_ref().map(|p| format!("; last good checkpoint: {}", p.display())).unwrap_or_default())]
    Diverged {
        step: usize,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
