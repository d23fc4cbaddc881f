//! Weighted Gaussian mixtures and the pruning/merging hypotheses that shrink them.

use std::fmt;

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gauss::{moment_match_merge, GaussianComponent};
use crate::numeric::log_sum_exp;
use crate::tol::WEIGHT_SUM_TOL;

/// A reduction move. Indices are 0-based; `Display` prints them 1-based.
///
/// The derived ordering (every `Prune` before every `Merge`, then ascending
/// indices) is the tie-breaking order used by the reduction engines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Hypothesis {
    Prune(usize),
    /// Always stored with `i < j`.
    Merge(usize, usize),
}

impl Hypothesis {
    /// Canonical merge hypothesis; panics if `i == j`.
    pub fn merge(i: usize, j: usize) -> Self {
        assert_ne!(i, j, "cannot merge a component with itself");
        Hypothesis::Merge(i.min(j), i.max(j))
    }

    pub fn is_prune(&self) -> bool {
        matches!(self, Hypothesis::Prune(_))
    }

    /// Checks indices against a mixture of `n` components.
    pub fn validate(&self, n: usize) -> Result<()> {
        let ok = match *self {
            Hypothesis::Prune(j) => j < n,
            Hypothesis::Merge(i, j) => i < j && j < n,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidHypothesis(self.to_string(), n))
        }
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Hypothesis::Prune(j) => write!(f, "prune({})", j + 1),
            Hypothesis::Merge(i, j) => write!(f, "merge({},{})", i + 1, j + 1),
        }
    }
}

/// `p(x) = Σ w_I N(x; μ_I, Σ_I)` over a non-empty list of equal-dimension components.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<GaussianComponent>,
}

impl GaussianMixture {
    /// Builds a mixture; weights must be positive but need not sum to one.
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let dim = components.first().ok_or(Error::EmptyMixture)?.dim();
        for c in &components {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: c.dim() });
            }
            if !(c.weight() > 0.0) {
                return Err(Error::InvalidWeight(c.weight()));
            }
        }
        Ok(Self { dim, components })
    }

    /// Builds a mixture and rescales its weights to sum to one.
    pub fn normalized(components: Vec<GaussianComponent>) -> Result<Self> {
        Self::new(components)?.renormalize()
    }

    /// 1-D mixture from `(weight, mean, variance)` triples, renormalized.
    pub fn univariate(parts: &[(f64, f64, f64)]) -> Result<Self> {
        let total: f64 = parts.iter().map(|p| p.0).sum();
        let comps = parts
            .iter()
            .map(|&(w, m, v)| GaussianComponent::univariate(w / total, m, v))
            .collect::<Result<Vec<_>>>()?;
        Self::normalized(comps)
    }

    /// Divides every weight by the current weight sum.
    pub fn renormalize(self) -> Result<Self> {
        let sum = self.weight_sum();
        let components = self
            .components
            .into_iter()
            .map(|c| {
                let w = c.weight() / sum;
                c.with_weight(w)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim: self.dim, components })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &GaussianComponent {
        &self.components[i]
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight()).collect()
    }

    pub fn weight_sum(&self) -> f64 {
        self.components.iter().map(|c| c.weight()).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.weight_sum() - 1.0).abs() <= WEIGHT_SUM_TOL
    }

    pub fn ensure_normalized(&self) -> Result<()> {
        if self.is_normalized() {
            Ok(())
        } else {
            Err(Error::NotNormalized { sum: self.weight_sum() })
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        Ok(())
    }

    /// `log p(x)` accumulated with log-sum-exp.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.log_pdf_unchecked(x))
    }

    pub(crate) fn log_pdf_unchecked(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight().ln() + c.log_pdf_unchecked(x))
            .collect();
        log_sum_exp(&terms)
    }

    /// `p(x)`; far tails return 0 or a subnormal instead of failing.
    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        self.log_pdf(x).map(f64::exp)
    }

    /// Index of the largest weighted component density at `x`.
    pub fn most_responsible(&self, x: &[f64]) -> Result<usize> {
        self.check_point(x)?;
        let mut best = (0, f64::NEG_INFINITY);
        for (i, c) in self.components.iter().enumerate() {
            let v = c.weight().ln() + c.log_pdf_unchecked(x);
            if v > best.1 {
                best = (i, v);
            }
        }
        Ok(best.0)
    }

    /// The reduced mixture under hypothesis `h`.
    ///
    /// Pruning removes component `j` and rescales the survivors; merging
    /// replaces `i, j` by their moment-matched merge at position `i`. The
    /// result is renormalized exactly, so long chains do not drift.
    pub fn apply(&self, h: Hypothesis) -> Result<GaussianMixture> {
        self.ensure_normalized()?;
        h.validate(self.len())?;
        let components = match h {
            Hypothesis::Prune(j) => {
                let wj = self.components[j].weight();
                if self.len() < 2 || !(1.0 - wj > 0.0) {
                    return Err(Error::PruneAllMass { index: j + 1, weight: wj });
                }
                self.components
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != j)
                    .map(|(_, c)| c.clone())
                    .collect::<Vec<_>>()
            }
            Hypothesis::Merge(i, j) => {
                let merged = moment_match_merge(&self.components[i], &self.components[j])?;
                let mut out = Vec::with_capacity(self.len() - 1);
                for (k, c) in self.components.iter().enumerate() {
                    if k == i {
                        out.push(merged.clone());
                    } else if k != j {
                        out.push(c.clone());
                    }
                }
                out
            }
        };
        Self::new(components)?.renormalize()
    }

    /// All hypotheses in tie-breaking order: prunes by index, then merges lexicographically.
    pub fn enumerate_hypotheses(&self, include_pruning: bool) -> Result<Vec<Hypothesis>> {
        let n = self.len();
        if n < 2 {
            return Err(Error::TooFewComponents { needed: 2, found: n });
        }
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        if include_pruning {
            out.extend((0..n).map(Hypothesis::Prune));
        }
        for i in 0..n {
            for j in i + 1..n {
                out.push(Hypothesis::Merge(i, j));
            }
        }
        Ok(out)
    }

    /// `n` i.i.d. draws, deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        Ok(self.sample_labeled(n, seed)?.into_iter().map(|(x, _)| x).collect())
    }

    /// Draws together with the index of the component each came from.
    pub fn sample_labeled(&self, n: usize, seed: u64) -> Result<Vec<(DVector<f64>, usize)>> {
        self.ensure_normalized()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_labeled_with(n, &mut rng)
    }

    pub(crate) fn sample_labeled_with<R: rand::Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<(DVector<f64>, usize)>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let index = WeightedIndex::new(self.weights())
            .map_err(|e| Error::InvalidArgument(format!("weights: {e}")))?;
        Ok((0..n)
            .map(|_| {
                let k = index.sample(rng);
                (self.components[k].sample(rng), k)
            })
            .collect())
    }
}
