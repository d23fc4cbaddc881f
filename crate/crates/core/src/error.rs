use thiserror::Error;

/// Errors raised by mixture construction, divergence evaluation and reduction.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("covariance is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("covariance contains non-finite entries")]
    NonFinite,

    #[error("invalid weight {0}")]
    InvalidWeight(f64),

    #[error("total weight of merged pair is zero")]
    ZeroTotalWeight,

    #[error("mixture has no components")]
    EmptyMixture,

    #[error("mixture is not normalized (weight sum {sum})")]
    NotNormalized { sum: f64 },

    #[error("hypothesis {0} is not valid for a mixture of {1} components")]
    InvalidHypothesis(String, usize),

    #[error("cannot prune component {index}: it carries the entire mass (weight {weight})")]
    PruneAllMass { index: usize, weight: f64 },

    #[error("need at least {needed} components, mixture has {found}")]
    TooFewComponents { needed: usize, found: usize },

    #[error("reduction target {target} out of range 1..={size}")]
    InvalidTarget { target: usize, size: usize },

    #[error("hypothesis {0} is outside the hypothesis set of {1}")]
    HypothesisSetMismatch(String, &'static str),

    #[error("target density underflows to zero at {abscissa:?}")]
    Underflow { abscissa: Vec<f64> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("EM failed: {0}")]
    Em(String),
}

pub type Result<T> = std::result::Result<T, Error>;
