use thiserror::Error;

/// Errors produced by the estimation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum WnError {
    #[error("non-finite value {0} where a finite angle was expected")]
    NonFinite(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    /// A circular statistic is undefined for the given data (zero resultant,
    /// zero spread about the mean).
    #[error("degenerate statistic: {0}")]
    DegenerateStatistic(String),

    #[error("degenerate initialization: {0}; consider adding a small jitter to the data")]
    DegenerateInit(String),

    #[error("covariance matrix is not positive definite")]
    SingularCovariance,

    #[error("covariance matrix is not symmetric")]
    Asymmetric,

    #[error("lattice too large: J = {j} with p = {p} exceeds {limit} rows")]
    LatticeTooLarge { j: usize, p: usize, limit: usize },

    #[error("non-finite log-likelihood at iteration {iteration}")]
    NumericalFailure { iteration: usize },

    /// The M-step cannot produce a covariance (too few points, a constant column).
    #[error("degenerate estimate: {0}")]
    Degenerate(String),

    #[error("dimension p = {p} exceeds the direct-maximization guard (p <= {limit}); raise the guard explicitly to override")]
    DimensionGuard { p: usize, limit: usize },

    #[error("correlation generator did not reach the target after {rounds} rounds (condition number {achieved})")]
    CorrelationNotConverged { rounds: usize, achieved: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = WnError> = std::result::Result<T, E>;
