//! Library-wide numerical tolerances.
//!
//! Positive definiteness is decided by Cholesky success alone; there is no
//! eigenvalue threshold.

/// Relative symmetry tolerance for covariances: `max|Σ − Σᵀ| ≤ SYMMETRY_RTOL · max|Σ|`.
pub const SYMMETRY_RTOL: f64 = 1e-12;

/// Accepted deviation of a normalized mixture's weight sum from one.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Slack on the per-component weight upper bound (`weight ≤ 1 + WEIGHT_MAX_SLACK`).
pub const WEIGHT_MAX_SLACK: f64 = 1e-9;

/// Minimum sample count accepted by the Monte Carlo divergence estimator.
pub const MC_MIN_SAMPLES: usize = 1000;
