//! Shared error type for the library modules.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum GpError {
    /// A parameter that must be positive (or otherwise constrained) was not.
    #[error("invalid parameter `{name}`: {value}")]
    InvalidParameter { name: &'static str, value: f64 },

    /// Two points (or a point and a query) have different dimensions.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Covariate points must be pairwise distinct.
    #[error("duplicate covariate points at indices {i} and {j}")]
    DuplicatePoints { i: usize, j: usize },

    /// A dataset needs at least one point.
    #[error("dataset is empty")]
    EmptyDataset,

    /// Covariates and responses must have equal length.
    #[error("points/values length mismatch: {points} points, {values} values")]
    LengthMismatch { points: usize, values: usize },

    /// Operation requires more data points than were supplied.
    #[error("operation needs at least {needed} data points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// The requested kernel family does not support this operation.
    #[error("unsupported kernel for this operation: {0}")]
    UnsupportedKernel(&'static str),

    /// Symmetric factorization hit a non-positive pivot. This is the
    /// numerical signature of the Gram matrix losing positive definiteness,
    /// which happens as the lengthscale grows large.
    #[error("matrix is not positive definite at pivot {pivot} (condition estimate {condition_estimate:.3e})")]
    NotPositiveDefinite {
        pivot: usize,
        condition_estimate: f64,
    },

    /// A basis mean was used where resolved coefficients are required.
    #[error("mean has unresolved basis coefficients; estimate them first")]
    UnresolvedMeanCoefficients,

    /// Profiled scale estimation with centred data identically zero.
    #[error("degenerate scale: centred data are identically zero, sigma_ML = 0")]
    DegenerateScale,

    /// The basis design matrix does not have full column rank.
    #[error("basis design matrix is rank deficient")]
    RankDeficientBasis,

    /// Information functionals violate the supported layout.
    #[error("invalid information functional layout: {0}")]
    FunctionalLayout(String),

    /// Grid specification violates its invariants.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// The precision context has too few digits for the requested solve.
    #[error("precision of {digits} decimal digits is insufficient (pivot {pivot} lost all significance); retry with at least {required} digits")]
    PrecisionInsufficient {
        digits: usize,
        pivot: usize,
        required: usize,
    },

    /// A predictive distribution carried a negative variance.
    #[error("negative variance in predictive distribution: {0}")]
    NegativeVariance(f64),

    /// A grid estimate came back inconclusive where a verdict was required.
    #[error("estimation inconclusive: {0}")]
    Inconclusive(String),
}

pub type Result<T> = std::result::Result<T, GpError>;
