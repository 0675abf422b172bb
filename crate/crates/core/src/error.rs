//! Error type shared across the engine.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Masked softmax with every position masked out.
    #[error("empty support: all positions are masked out")]
    EmptySupport,

    #[error("empty reduction: {0}")]
    EmptyReduction(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("evaluation error: non-finite value in {0}")]
    NonFinite(String),

    #[error("training divergence: non-finite gradient for parameter `{0}`")]
    Divergence(String),

    #[error("unsupported class {index}: no positive examples in the training split")]
    UnsupportedClass { index: usize },

    #[error("task mismatch: {0}")]
    TaskMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics themselves (as opposed to bad
    /// configuration or malformed input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Divergence(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
