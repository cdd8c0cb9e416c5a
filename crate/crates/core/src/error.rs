//! Error types shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while configuring or running an experiment.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its documented domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An exact integer count does not fit the chosen representation.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// An arm or node index is out of range.
    #[error("index {index} out of range (limit {limit})")]
    Index { index: u64, limit: u64 },

    /// An operation was called in a state that cannot answer it.
    #[error("state error: {0}")]
    State(String),

    /// An iterative numeric routine failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A secure-aggregation protocol rule was violated.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Too few members survived to reconstruct the aggregate this round.
    #[error("aggregation failure: {surviving} surviving members, threshold {threshold}")]
    AggregationFailure { surviving: usize, threshold: usize },

    /// The experiment configuration is invalid; names the offending field.
    #[error("config error: {0}")]
    Config(String),

    /// A data file could not be parsed; carries the 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
