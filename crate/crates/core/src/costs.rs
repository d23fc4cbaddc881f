//! Divergences and greedy decision statistics.
//!
//! Three families live here:
//!
//! - exact or sampled divergences between mixtures: the closed-form integral
//!   squared error and a seeded Monte Carlo KL estimator;
//! - Runnalls' forward-KL merge bound `B(I,J)`;
//! - the reverse-KL approximations: the crude and log-sum pruning bounds
//!   `R(0,I)`, the simple merge bound, and the switched-divergence merge
//!   approximation `R(I,J)` built from `V(q_K, q_I, q_J)`.
//!
//! Sums of `w·exp(−D)` terms are always formed in log space: divergences of
//! several hundred nats are routine for well separated components.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gauss::{
    expected_log_moments, kld_gauss, log_inner_product, moment_match_merge, product_decompose, GaussianComponent,
};
use crate::mixture::{GaussianMixture, Hypothesis};
use crate::numeric::{log_add_exp, softplus};
use crate::reduce::CostTable;
use crate::tol::MC_MIN_SAMPLES;

/// A divergence value; closed forms carry `std_error = 0` and `samples = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl DivergenceEstimate {
    pub fn exact(value: f64) -> Self {
        Self { value, std_error: 0.0, samples: 0 }
    }
}

/// Which decision statistic drives the greedy reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CostKind {
    /// Runnalls' `B(I,J)`; merge hypotheses only.
    RunnallsB,
    /// Williams' integral squared error against the current mixture.
    WilliamsIse,
    /// Log-sum pruning bound and switched-divergence merge approximation.
    ArklFull,
    /// Crude pruning bound and simple merge bound.
    ArklSimple,
}

impl CostKind {
    pub const ALL: [CostKind; 4] = [CostKind::RunnallsB, CostKind::WilliamsIse, CostKind::ArklFull, CostKind::ArklSimple];

    pub fn includes_pruning(self) -> bool {
        !matches!(self, CostKind::RunnallsB)
    }

    /// The command-line name.
    pub fn name(self) -> &'static str {
        match self {
            CostKind::RunnallsB => "runnalls",
            CostKind::WilliamsIse => "williams",
            CostKind::ArklFull => "arkl",
            CostKind::ArklSimple => "arkl-simple",
        }
    }
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "runnalls" => Ok(CostKind::RunnallsB),
            "williams" => Ok(CostKind::WilliamsIse),
            "arkl" => Ok(CostKind::ArklFull),
            "arkl-simple" => Ok(CostKind::ArklSimple),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

fn same_dim(p: &GaussianMixture, q: &GaussianMixture) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), found: q.dim() });
    }
    Ok(())
}

/// `Σᵢⱼ aᵢ bⱼ ⟨qᵢ, qⱼ⟩` over two component lists, counting inner products.
fn cross_term(a: &[GaussianComponent], b: &[GaussianComponent], evals: &mut u64) -> Result<f64> {
    let mut acc = 0.0;
    for ca in a {
        for cb in b {
            acc += ca.weight() * cb.weight() * log_inner_product(ca, cb)?.exp();
            *evals += 1;
        }
    }
    Ok(acc)
}

/// `∫p² + ∫q² − 2∫pq` without clamping; rounding may leave it slightly negative.
pub(crate) fn ise_raw(p: &GaussianMixture, q: &GaussianMixture, evals: &mut u64) -> Result<f64> {
    same_dim(p, q)?;
    let pp = cross_term(p.components(), p.components(), evals)?;
    let qq = cross_term(q.components(), q.components(), evals)?;
    let pq = cross_term(p.components(), q.components(), evals)?;
    Ok(pp + qq - 2.0 * pq)
}

/// Exact `∫(p − q)² dx` for Gaussian mixtures, all three terms included.
pub fn ise_analytic(p: &GaussianMixture, q: &GaussianMixture) -> Result<f64> {
    let mut evals = 0;
    Ok(ise_raw(p, q, &mut evals)?.max(0.0))
}

/// Seeded Monte Carlo estimate of `D_KL(from ‖ to)`.
///
/// Serves as forward or reverse KL depending on argument order. A draw at
/// which the density of `to` underflows to exactly zero is an error carrying
/// the abscissa, even though the estimate itself is accumulated in log space.
pub fn mc_kld(from: &GaussianMixture, to: &GaussianMixture, n: usize, seed: u64) -> Result<DivergenceEstimate> {
    same_dim(from, to)?;
    from.ensure_normalized()?;
    to.ensure_normalized()?;
    if n < MC_MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!("need at least {MC_MIN_SAMPLES} samples, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = from.sample_labeled_with(n, &mut rng)?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for (x, _) in &draws {
        let lf = from.log_pdf_unchecked(x.as_slice());
        let lt = to.log_pdf_unchecked(x.as_slice());
        if lt.exp() == 0.0 {
            return Err(Error::Underflow { abscissa: x.iter().copied().collect() });
        }
        let v = lf - lt;
        sum += v;
        sum_sq += v * v;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok(DivergenceEstimate { value: mean, std_error: (var / nf).sqrt(), samples: n })
}

/// Runnalls' `B(I,J) = w_I D_KL(q_I‖q_IJ) + w_J D_KL(q_J‖q_IJ)` with raw mixture weights.
pub fn runnalls_bound(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    let merged = moment_match_merge(a, b)?;
    Ok(a.weight() * kld_gauss(a, &merged)? + b.weight() * kld_gauss(b, &merged)?)
}

/// `−log(w_I e^{−D(q_K‖q_I)} + w_J e^{−D(q_K‖q_J)})`, an upper bound on
/// `∫ q_K log[q_K / (w_I q_I + w_J q_J)]`.
pub fn lemma1_bound(
    k: &GaussianComponent,
    i: &GaussianComponent,
    j: &GaussianComponent,
    w_i: f64,
    w_j: f64,
) -> Result<f64> {
    if !(w_i > 0.0 && w_j > 0.0) {
        return Err(Error::InvalidArgument(format!("weights must be positive: {w_i}, {w_j}")));
    }
    let a = w_i.ln() - kld_gauss(k, i)?;
    let b = w_j.ln() - kld_gauss(k, j)?;
    Ok(-log_add_exp(a, b))
}

/// `−log(1 − w)`: the cost of pruning mass `w` when nothing overlaps it.
pub fn crude_prune_bound(w: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&w) {
        return Err(Error::InvalidWeight(w));
    }
    Ok(-(-w).ln_1p())
}

/// `D_KL(q_a ‖ q_b)` for every ordered pair; the diagonal is zero.
pub fn pairwise_kld_matrix(m: &GaussianMixture) -> Result<DMatrix<f64>> {
    let n = m.len();
    let mut out = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            if a != b {
                out[(a, b)] = kld_gauss(m.component(a), m.component(b))?;
            }
        }
    }
    Ok(out)
}

/// `R(0,I)` from raw weights and `kld[(a, b)] = D_KL(q_a ‖ q_b)`.
pub(crate) fn arkl_prune_from_weights(weights: &[f64], i: usize, kld: &DMatrix<f64>) -> Result<f64> {
    let n = weights.len();
    if n < 2 {
        return Err(Error::TooFewComponents { needed: 2, found: n });
    }
    let wi = weights[i];
    let crude = crude_prune_bound(wi)?;
    let rest = 1.0 - wi;
    let mut best = f64::INFINITY;
    for (j, &wj) in weights.iter().enumerate() {
        if j == i {
            continue;
        }
        // log(1 + (w_I/w_J) e^{−D(q_J‖q_I)})
        let correction = softplus((wi / wj).ln() - kld[(j, i)]);
        best = best.min(crude - (wj / rest) * correction);
    }
    Ok(best)
}

/// The log-sum pruning bound `R(0,I)`, minimized over the partner component `J`.
///
/// `pairwise_kld[(a, b)]` must hold `D_KL(q_a ‖ q_b)` for the components of `m`
/// (see [`pairwise_kld_matrix`]). `i` is 0-based.
pub fn arkl_prune_cost(m: &GaussianMixture, i: usize, pairwise_kld: &DMatrix<f64>) -> Result<f64> {
    let n = m.len();
    if i >= n {
        return Err(Error::InvalidHypothesis(Hypothesis::Prune(i).to_string(), n));
    }
    if pairwise_kld.nrows() != n || pairwise_kld.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: pairwise_kld.nrows() });
    }
    arkl_prune_from_weights(&m.weights(), i, pairwise_kld)
}

/// `w_IJ log w_IJ − w_IJ log(w_I e^{−a} + w_J e^{−b})`, the common shape of both merge statistics.
pub(crate) fn merge_statistic(w_i: f64, w_j: f64, div_i: f64, div_j: f64) -> f64 {
    let w = w_i + w_j;
    w * w.ln() - w * log_add_exp(w_i.ln() - div_i, w_j.ln() - div_j)
}

/// Upper bound on the reverse KL of merging `i` and `j`, via `D_KL(q_IJ‖q_I)` and `D_KL(q_IJ‖q_J)`.
pub fn simple_merge_bound(i: &GaussianComponent, j: &GaussianComponent) -> Result<f64> {
    let merged = moment_match_merge(i, j)?;
    Ok(merge_statistic(i.weight(), j.weight(), kld_gauss(&merged, i)?, kld_gauss(&merged, j)?))
}

/// `V(q_K, q_I, q_J) = ∫ q_K (1 − q_I/q_I^max) log(q_K/q_J) dx` in closed form.
///
/// `q_I` is the switching density. Weights are ignored.
pub fn switched_divergence_v(k: &GaussianComponent, i: &GaussianComponent, j: &GaussianComponent) -> Result<f64> {
    let kl = kld_gauss(k, j)?;
    let prod = product_decompose(i, k)?;
    // (2π)^{k/2}|Σ_I|^{1/2} · N(μ_I; μ_K, Σ_K + Σ_I) = scale / q_I^max
    let overlap = (prod.log_scale - i.log_max_value()).exp();
    let e_log_k = expected_log_moments(&prod.mean_star, &prod.cov_star, k);
    let e_log_j = expected_log_moments(&prod.mean_star, &prod.cov_star, j);
    Ok(kl - overlap * (e_log_k - e_log_j))
}

/// Optimal split `α* = w_I e^{−v_I} / (w_I e^{−v_I} + w_J e^{−v_J})` of the log-sum bound.
pub fn alpha_star(w_i: f64, w_j: f64, v_i: f64, v_j: f64) -> Result<f64> {
    if !(w_i > 0.0 && w_j > 0.0) || !v_i.is_finite() || !v_j.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha_star({w_i}, {w_j}, {v_i}, {v_j})")));
    }
    let a = w_i.ln() - v_i;
    let b = w_j.ln() - v_j;
    Ok(1.0 / (1.0 + (b - a).exp()))
}

/// Both switched divergences for the merge of `i` and `j`:
/// `(V(q_IJ, q_J, q_I), V(q_IJ, q_I, q_J))`.
pub(crate) fn merge_switched_pair(
    merged: &GaussianComponent,
    i: &GaussianComponent,
    j: &GaussianComponent,
) -> Result<(f64, f64)> {
    Ok((switched_divergence_v(merged, j, i)?, switched_divergence_v(merged, i, j)?))
}

/// The switched-divergence merge approximation `R(I,J)`.
pub fn arkl_merge_cost(i: &GaussianComponent, j: &GaussianComponent) -> Result<f64> {
    let w = i.weight() + j.weight();
    if w > 1.0 + 1e-9 {
        return Err(Error::InvalidWeight(w));
    }
    let merged = moment_match_merge(i, j)?;
    let (v_i, v_j) = merge_switched_pair(&merged, i, j)?;
    Ok(merge_statistic(i.weight(), j.weight(), v_i, v_j))
}

/// Cost of hypothesis `h` for mixture `m` under `kind`, read from a table built for `m`.
pub fn hypothesis_cost(m: &GaussianMixture, h: Hypothesis, kind: CostKind, cache: &CostTable) -> Result<f64> {
    if cache.kind() != kind {
        return Err(Error::InvalidArgument(format!("cost table built for {}, asked for {kind}", cache.kind())));
    }
    if cache.len() != m.len() {
        return Err(Error::DimensionMismatch { expected: m.len(), found: cache.len() });
    }
    cache.cost(h)
}
