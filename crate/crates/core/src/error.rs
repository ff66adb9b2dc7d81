use thiserror::Error;

/// Errors raised by the joint mirror library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input value lies outside the domain an operation accepts
    /// (p-value outside `[0, 1]`, non-finite statistic, dimension mismatch).
    #[error("input domain error: {0}")]
    Domain(String),

    /// Invalid run configuration: masking scheme, FDR level, bandwidth, grid.
    #[error("configuration error: {0}")]
    Config(String),

    /// Not enough data points for an estimator.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A caller broke an operation's precondition (removing a non-root,
    /// revealing a feature twice, selecting from an empty candidate set).
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, Error>;
