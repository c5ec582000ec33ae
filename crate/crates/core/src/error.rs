use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("prompt must contain at least one token")]
    EmptyPrompt,

    #[error("token id {token} outside vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },

    #[error("kv cache full: capacity {capacity}")]
    CacheOverflow { capacity: usize },

    #[error("controller contract violated: {0}")]
    Controller(String),

    #[error("target unreachable without attention pruning: ffn ratio {0:.4} >= 1")]
    UnreachableRatio(f64),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
