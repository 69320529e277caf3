use thiserror::Error;

/// Error type shared by all modules in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("probability mass is negative at flat index {index}: {value}")]
    NegativeMass { index: usize, value: f64 },

    #[error("pmf sums to {sum}, outside the 1e-9 acceptance window around 1")]
    NotNormalized { sum: f64 },

    #[error("source {source_index}: symbol {symbol} has no zero-distortion reconstruction")]
    MissingZeroDistortionSymbol { source_index: usize, symbol: usize },

    #[error("source {source_index}: distortion entry at ({row}, {col}) is not finite")]
    InfiniteDistortion { source_index: usize, row: usize, col: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("subset of source indices is empty")]
    EmptySubset,

    #[error("source index {index} out of range for a library of {len} sources")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dsbs parameter rho = {rho} outside [0, 0.5]")]
    RhoOutOfRange { rho: f64 },

    #[error("invalid pmf: {0}")]
    InvalidPmf(String),

    #[error("iteration cap {cap} hit with gap {gap:.3e} above tolerance")]
    NoConvergence { cap: usize, gap: f64 },

    #[error("distortion target {0:?} cannot be met by any test channel")]
    InfeasibleTarget(Vec<f64>),

    #[error("cache capacity must be nonnegative, got {cache}")]
    InvalidCache { cache: f64 },

    #[error("instance too large for exhaustive search: {0}")]
    InstanceTooLarge(String),

    #[error("candidate violates conditions: {0:?}")]
    ConditionViolated(Vec<String>),

    #[error("distortion transform is invalid: {0}")]
    InvalidTransform(String),
}

pub type Result<T> = std::result::Result<T, Error>;
