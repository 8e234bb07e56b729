//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input file (bad magic bytes, truncation, unparseable cell).
    #[error("format error: {0}")]
    Format(String),

    /// Dimension mismatch between inputs.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid data content (monomorphic variant, all-missing column,
    /// unmatched sample ids, non-binary response for a binomial fit, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure (non positive-definite covariance, singular system).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An iterative procedure exhausted its iteration budget.
    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence {
        what: String,
        iterations: usize,
        /// Per-iteration diagnostics (meaning depends on the procedure).
        trace: Vec<String>,
    },

    /// Invalid configuration or argument value.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
