//! Shared error type for the whole crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (dimensions, bin counts, hyperparameters).
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Matrix/vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A pre-normalization embedding collapsed to (near) zero length.
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    /// A caller-side contract was violated (e.g. rows not unit-normalized).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A batch cannot produce both positive and negative pairs.
    #[error("batch composition: {0}")]
    BatchComposition(String),

    /// An operation that needs samples received none.
    #[error("empty sample set: {0}")]
    EmptySampleSet(String),

    /// Non-finite values where finite numbers are required.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Malformed input data (CSV, checkpoint contents).
    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
