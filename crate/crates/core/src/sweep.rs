//! Divergence curves for the symmetric pair `w₁ N(−μ, 1) + w₂ N(μ, 1)`.
//!
//! Exact reverse KL divergences come from adaptive quadrature over a ±12σ
//! envelope; the bounds and approximations come from [`crate::costs`].

use crate::costs::{arkl_merge_cost, arkl_prune_cost, crude_prune_bound, pairwise_kld_matrix, simple_merge_bound};
use crate::error::{Error, Result};
use crate::gauss::GaussianComponent;
use crate::mixture::{GaussianMixture, Hypothesis};
use crate::quadrature::{integrate_with_breaks, QuadOptions};

/// Absolute tolerance of the quadrature columns.
pub const SWEEP_ABS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub mu: f64,
    /// `D_KL(prune(2) ‖ p)`.
    pub exact_prune_rkld: f64,
    /// `−log(1 − w₂)`.
    pub crude_bound: f64,
    pub r02: f64,
    /// `D_KL(merge(1,2) ‖ p)`.
    pub exact_merge_rkld: f64,
    pub simple_merge_bound: f64,
    pub r12: f64,
    /// Both quadratures met the tolerance.
    pub converged: bool,
}

pub fn pair_mixture(w1: f64, mu: f64) -> Result<GaussianMixture> {
    if !(w1 > 0.0 && w1 < 1.0) {
        return Err(Error::InvalidWeight(w1));
    }
    GaussianMixture::normalized(vec![
        GaussianComponent::univariate(w1, -mu, 1.0)?,
        GaussianComponent::univariate(1.0 - w1, mu, 1.0)?,
    ])
}

/// `D_KL(q ‖ p)` for 1-D `q` by quadrature; returns the value and convergence.
pub fn quadrature_rkld(q: &GaussianMixture, p: &GaussianMixture, abs_tol: f64) -> Result<(f64, bool)> {
    if q.dim() != 1 || p.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, found: q.dim().max(p.dim()) });
    }
    let mut breaks: Vec<f64> = Vec::new();
    for c in q.components().iter().chain(p.components()) {
        let (m, s) = (c.mean()[0], c.cov()[(0, 0)].sqrt());
        breaks.extend([m - 12.0 * s, m, m + 12.0 * s]);
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let (lo, hi) = (breaks[0], breaks[breaks.len() - 1]);
    let integrand = |x: f64| {
        let lq = q.log_pdf_unchecked(&[x]);
        let lp = p.log_pdf_unchecked(&[x]);
        if lq == f64::NEG_INFINITY {
            0.0
        } else {
            lq.exp() * (lq - lp)
        }
    };
    let opts = QuadOptions { abs_tol, rel_tol: 0.0, max_intervals: 4000 };
    let r = integrate_with_breaks(integrand, &breaks, opts);
    debug_assert!(lo <= hi);
    Ok((r.value, r.converged))
}

pub fn sweep_row(w1: f64, mu: f64) -> Result<SweepRow> {
    let p = pair_mixture(w1, mu)?;
    let pruned = p.apply(Hypothesis::Prune(1))?;
    let merged = p.apply(Hypothesis::Merge(0, 1))?;
    let (exact_prune_rkld, c1) = quadrature_rkld(&pruned, &p, SWEEP_ABS_TOL)?;
    let (exact_merge_rkld, c2) = quadrature_rkld(&merged, &p, SWEEP_ABS_TOL)?;
    let kld = pairwise_kld_matrix(&p)?;
    let (a, b) = (p.component(0), p.component(1));
    Ok(SweepRow {
        mu,
        exact_prune_rkld,
        crude_bound: crude_prune_bound(b.weight())?,
        r02: arkl_prune_cost(&p, 1, &kld)?,
        exact_merge_rkld,
        simple_merge_bound: simple_merge_bound(a, b)?,
        r12: arkl_merge_cost(a, b)?,
        converged: c1 && c2,
    })
}

/// `steps` evenly spaced values of μ from `mu_min` to `mu_max` inclusive.
pub fn sweep(w1: f64, mu_min: f64, mu_max: f64, steps: usize) -> Result<Vec<SweepRow>> {
    if steps == 0 || !mu_min.is_finite() || !mu_max.is_finite() || mu_max < mu_min || (steps == 1 && mu_max != mu_min) {
        return Err(Error::InvalidArgument(format!(
            "invalid sweep range [{mu_min}, {mu_max}] with {steps} steps"
        )));
    }
    (0..steps)
        .map(|k| {
            let mu = if steps == 1 { mu_min } else { mu_min + (mu_max - mu_min) * k as f64 / (steps - 1) as f64 };
            sweep_row(w1, mu)
        })
        .collect()
}
