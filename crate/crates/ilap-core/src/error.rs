//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Feedback keys do not match the allocation being recorded.
    #[error("feedback does not match allocation: {0}")]
    FeedbackKeys(String),

    /// A numeric routine failed to reach its documented guarantees.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Experiment config file problem, with a 1-based line number.
    #[error("config error (line {line}): {msg}")]
    Config { line: usize, msg: String },

    /// Ratings file problem, with a 1-based line number.
    #[error("ratings error (line {line}): {msg}")]
    Ratings { line: usize, msg: String },

    /// Configs handed to `compare` disagree on the shared environment.
    #[error("incompatible configs: {0}")]
    Compare(String),

    /// Result aggregation over runs of unequal shape.
    #[error("aggregation error: {0}")]
    Aggregate(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
