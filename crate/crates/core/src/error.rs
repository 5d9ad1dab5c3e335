use thiserror::Error;

/// Errors raised by the analytic and Monte Carlo routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed domain, model or configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A point or coordinate outside the set it must belong to.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested computation exceeds a dimension cap or needs a model feature
    /// the model does not provide.
    #[error("capability error: {0}")]
    Capability(String),

    /// A covariance block that must be inverted is numerically singular.
    #[error("degenerate model: {0}")]
    Degenerate(String),

    /// A conditional variance came out clearly negative.
    #[error("model inconsistency: {0}")]
    ModelInconsistency(String),

    /// Non-finite integrand values or similar numerical breakdown.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// More than one variance maximizer where a unique one is required.
    #[error("ambiguous maximizer: {0}")]
    Ambiguous(String),
}

pub type Result<T> = std::result::Result<T, Error>;
