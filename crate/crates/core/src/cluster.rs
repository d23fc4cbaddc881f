//! Robust clustering: over-cluster with EM, then reduce.
//!
//! Points owned by a pruned component are discarded as outliers; points of
//! merged components are reassigned by Mahalanobis distance to the updated
//! mixture.

use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::costs::CostKind;
use crate::error::{Error, Result};
use crate::gauss::{jitter, GaussianComponent};
use crate::mixture::{GaussianMixture, Hypothesis};
use crate::numeric::log_sum_exp;
use crate::reduce::{reduce, ReduceOptions, ReductionTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    /// 0-based index into the associated mixture.
    Cluster(usize),
    Discarded,
}

/// Ground-truth source of a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Component(usize),
    Spurious,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    points: Vec<DVector<f64>>,
    labels: Vec<Label>,
    truth: Option<Vec<Origin>>,
}

impl LabeledDataset {
    pub fn new(points: Vec<DVector<f64>>, labels: Vec<Label>, truth: Option<Vec<Origin>>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::DimensionMismatch { expected: points.len(), found: labels.len() });
        }
        if let Some(t) = &truth {
            if t.len() != points.len() {
                return Err(Error::DimensionMismatch { expected: points.len(), found: t.len() });
            }
        }
        if let Some(first) = points.first() {
            let d = first.len();
            if let Some(bad) = points.iter().find(|p| p.len() != d) {
                return Err(Error::DimensionMismatch { expected: d, found: bad.len() });
            }
        }
        Ok(Self { points, labels, truth })
    }

    pub fn with_truth(self, truth: Vec<Origin>) -> Result<Self> {
        Self::new(self.points, self.labels, Some(truth))
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn truth(&self) -> Option<&[Origin]> {
        self.truth.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn discarded(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Discarded).count()
    }
}

/// The six-component 2-D mixture used to generate clustering data.
pub fn table2_mixture() -> GaussianMixture {
    let spec: [(f64, [f64; 2], [f64; 4]); 6] = [
        (0.2, [-5.0, 5.0], [1.0, 0.5, 0.5, 0.5]),
        (0.2, [4.0, 5.0], [1.0, 0.2, 0.2, 0.5]),
        (0.2, [4.0, -4.0], [2.0, 0.0, 0.0, 1.0]),
        (0.2, [-4.0, -4.0], [2.0, -2.0, -2.0, 3.0]),
        (0.1, [-7.0, 0.0], [0.1, 0.0, 0.0, 3.0]),
        (0.1, [7.0, 0.0], [0.1, 0.0, 0.0, 3.0]),
    ];
    let comps = spec
        .iter()
        .map(|(w, m, c)| GaussianComponent::from_slices(*w, m, c).expect("tabulated component is valid"))
        .collect();
    GaussianMixture::normalized(comps).expect("tabulated mixture is valid")
}

/// `n` draws from [`table2_mixture`] followed by `m` points uniform on the
/// origin-centred square of side `side`. Labels mirror the truth, with
/// spurious points labeled [`Label::Discarded`].
pub fn generate_table2_data(n: usize, m: usize, side: f64, seed: u64) -> Result<LabeledDataset> {
    if !(side > 0.0) || !side.is_finite() {
        return Err(Error::InvalidArgument(format!("side must be positive, got {side}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = table2_mixture();
    let mut points = Vec::with_capacity(n + m);
    let mut truth = Vec::with_capacity(n + m);
    for (x, k) in mix.sample_labeled_with(n, &mut rng)? {
        points.push(x);
        truth.push(Origin::Component(k));
    }
    let half = side / 2.0;
    let unif = Uniform::new_inclusive(-half, half).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for _ in 0..m {
        points.push(DVector::from_vec(vec![unif.sample(&mut rng), unif.sample(&mut rng)]));
        truth.push(Origin::Spurious);
    }
    let labels = truth
        .iter()
        .map(|t| match t {
            Origin::Component(k) => Label::Cluster(*k),
            Origin::Spurious => Label::Discarded,
        })
        .collect();
    LabeledDataset::new(points, labels, Some(truth))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EMConfig {
    pub n_clusters: usize,
    pub max_iters: usize,
    /// Stop once the total log-likelihood improves by less than this (nats).
    pub tol: f64,
    pub seed: u64,
    /// Covariance jitter relative to the mean per-coordinate data variance.
    pub jitter: f64,
}

impl EMConfig {
    pub fn new(n_clusters: usize, seed: u64) -> Self {
        Self { n_clusters, max_iters: 500, tol: 1e-6, seed, jitter: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub mixture: GaussianMixture,
    /// `n × K`; rows sum to one.
    pub responsibilities: DMatrix<f64>,
    /// Total log-likelihood at each E-step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Components re-seeded after collapsing.
    pub reinitialized: usize,
    /// Covariance factorizations rescued by jitter.
    pub jittered: usize,
}

impl EmFit {
    /// Hard assignment of point `i`.
    pub fn argmax(&self, i: usize) -> usize {
        argmax_row(&self.responsibilities, i)
    }
}

fn argmax_row(r: &DMatrix<f64>, i: usize) -> usize {
    let mut best = 0;
    for k in 1..r.ncols() {
        if r[(i, k)] > r[(i, best)] {
            best = k;
        }
    }
    best
}

fn check_points(data: &[DVector<f64>]) -> Result<usize> {
    let d = data.first().ok_or(Error::EmptyMixture)?.len();
    for p in data {
        if p.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: p.len() });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
    }
    Ok(d)
}

/// Mean per-coordinate variance; 1 for degenerate data.
fn data_scale(data: &[DVector<f64>]) -> f64 {
    let n = data.len() as f64;
    let mean = data.iter().fold(DVector::zeros(data[0].len()), |acc, x| acc + x) / n;
    let var = data.iter().map(|x| (x - &mean).norm_squared()).sum::<f64>() / (n * mean.len() as f64);
    if var > 0.0 && var.is_finite() {
        var
    } else {
        1.0
    }
}

fn kmeanspp<R: Rng>(data: &[DVector<f64>], k: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let mut centers = vec![data[rng.random_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| (x - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = data.len() - 1;
            for (i, &v) in d2.iter().enumerate() {
                if u < v {
                    pick = i;
                    break;
                }
                u -= v;
            }
            pick
        } else {
            rng.random_range(0..data.len())
        };
        let c = data[idx].clone();
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min((x - &c).norm_squared());
        }
        centers.push(c);
    }
    centers
}

fn component_with_jitter(
    weight: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    eps: f64,
    jittered: &mut usize,
) -> Result<GaussianComponent> {
    let mut current = cov;
    for attempt in 0..=3 {
        match GaussianComponent::new(weight, mean.clone(), current.clone()) {
            Ok(c) => return Ok(c),
            Err(Error::NotPositiveDefinite) | Err(Error::NotSymmetric { .. }) if attempt < 3 => {
                log::debug!("covariance jitter {eps:e} (attempt {})", attempt + 1);
                *jittered += 1;
                current = jitter(&current, eps * 10f64.powi(attempt));
            }
            Err(e) => return Err(Error::Em(format!("covariance not recoverable by jitter: {e}"))),
        }
    }
    unreachable!()
}

/// E-step: responsibilities and total log-likelihood.
fn e_step(mix: &GaussianMixture, data: &[DVector<f64>]) -> (DMatrix<f64>, f64) {
    let k = mix.len();
    let mut r = DMatrix::zeros(data.len(), k);
    let mut total = 0.0;
    let mut row = vec![0.0; k];
    for (i, x) in data.iter().enumerate() {
        for (j, c) in mix.components().iter().enumerate() {
            row[j] = c.weight().ln() + c.log_pdf_unchecked(x.as_slice());
        }
        let lse = log_sum_exp(&row);
        total += lse;
        let mut s = 0.0;
        for j in 0..k {
            let v = (row[j] - lse).exp();
            r[(i, j)] = v;
            s += v;
        }
        for j in 0..k {
            r[(i, j)] /= s;
        }
    }
    (r, total)
}

/// Fits a `cfg.n_clusters`-component mixture by expectation maximization.
pub fn em_fit(data: &[DVector<f64>], cfg: &EMConfig) -> Result<EmFit> {
    if cfg.n_clusters == 0 {
        return Err(Error::InvalidArgument("n_clusters must be at least 1".into()));
    }
    if !(cfg.tol > 0.0) || !(cfg.jitter >= 0.0) {
        return Err(Error::InvalidArgument("tol must be positive and jitter nonnegative".into()));
    }
    let d = check_points(data)?;
    let n = data.len();
    let k = cfg.n_clusters;
    if n < k {
        return Err(Error::TooFewComponents { needed: k, found: n });
    }
    let scale = data_scale(data);
    let eps = cfg.jitter * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut jittered = 0;
    let mut reinitialized = 0;

    let init_cov = DMatrix::identity(d, d) * scale;
    let comps = kmeanspp(data, k, &mut rng)
        .into_iter()
        .map(|m| GaussianComponent::new(1.0 / k as f64, m, init_cov.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut mix = GaussianMixture::normalized(comps)?;

    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut perturbed = false;
    let resp = loop {
        let (r, ll) = e_step(&mix, data);
        if !ll.is_finite() {
            return Err(Error::Em(format!("non-finite log-likelihood at iteration {iterations}")));
        }
        if let Some(&prev) = history.last() {
            let delta = ll - prev;
            if delta < -1e-8 && !perturbed {
                log::warn!("EM log-likelihood decreased by {:e} at iteration {iterations}", -delta);
            }
            if delta.abs() < cfg.tol && !perturbed {
                converged = true;
            }
        }
        history.push(ll);
        if converged || iterations == cfg.max_iters {
            break r;
        }
        iterations += 1;
        perturbed = false;

        let mut comps = Vec::with_capacity(k);
        for j in 0..k {
            let nk: f64 = r.column(j).sum();
            if nk < (d + 1) as f64 {
                // collapsed: reseed at the worst-explained point
                let worst = (0..n)
                    .min_by(|&a, &b| {
                        mix.log_pdf_unchecked(data[a].as_slice()).total_cmp(&mix.log_pdf_unchecked(data[b].as_slice()))
                    })
                    .unwrap();
                log::debug!("EM component {} collapsed (N_k = {nk:.3}); reseeding", j + 1);
                reinitialized += 1;
                perturbed = true;
                comps.push(GaussianComponent::new(1.0 / n as f64, data[worst].clone(), init_cov.clone())?);
                continue;
            }
            let mut mean = DVector::zeros(d);
            for (i, x) in data.iter().enumerate() {
                mean.axpy(r[(i, j)], x, 1.0);
            }
            mean /= nk;
            let mut cov = DMatrix::zeros(d, d);
            for (i, x) in data.iter().enumerate() {
                let diff = x - &mean;
                cov.ger(r[(i, j)], &diff, &diff, 1.0);
            }
            cov /= nk;
            cov = (&cov + cov.transpose()) * 0.5;
            let before = jittered;
            comps.push(component_with_jitter(nk / n as f64, mean, cov, eps, &mut jittered)?);
            perturbed |= jittered > before;
        }
        mix = GaussianMixture::normalized(comps)?;
    };
    log::info!(
        "EM: {iterations} iterations, converged = {converged}, log-likelihood {:.6}",
        history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(EmFit { mixture: mix, responsibilities: resp, log_likelihood: history, iterations, converged, reinitialized, jittered })
}

/// Reduces a fitted mixture and carries the point labels along.
///
/// Labels start at the argmax responsibility. A pruned component's points
/// become [`Label::Discarded`]; a merged pair's points are reassigned to the
/// nearest component (Mahalanobis) of the mixture after that step.
pub fn reduce_and_reassign(
    mix: &GaussianMixture,
    resp: &DMatrix<f64>,
    data: &[DVector<f64>],
    target: usize,
    kind: CostKind,
) -> Result<(GaussianMixture, LabeledDataset, ReductionTrace)> {
    if resp.nrows() != data.len() {
        return Err(Error::DimensionMismatch { expected: data.len(), found: resp.nrows() });
    }
    if resp.ncols() != mix.len() {
        return Err(Error::DimensionMismatch { expected: mix.len(), found: resp.ncols() });
    }
    if let Some(p) = data.first() {
        if p.len() != mix.dim() {
            return Err(Error::DimensionMismatch { expected: mix.dim(), found: p.len() });
        }
    }
    let mut labels: Vec<Option<usize>> = (0..data.len()).map(|i| Some(argmax_row(resp, i))).collect();
    let (reduced, trace) = reduce(mix, target, kind, &ReduceOptions::default())?;

    let mut current = mix.clone();
    for step in &trace.steps {
        let next = current.apply(step.chosen)?;
        match step.chosen {
            Hypothesis::Prune(j) => {
                for l in labels.iter_mut() {
                    *l = match *l {
                        Some(k) if k == j => None,
                        Some(k) if k > j => Some(k - 1),
                        other => other,
                    };
                }
            }
            Hypothesis::Merge(i, j) => {
                for (p, l) in labels.iter_mut().enumerate() {
                    *l = match *l {
                        Some(k) if k == i || k == j => Some(nearest(&next, &data[p])?),
                        Some(k) if k > j => Some(k - 1),
                        other => other,
                    };
                }
            }
        }
        current = next;
    }
    debug_assert_eq!(current, reduced);
    let labels = labels.into_iter().map(|l| l.map_or(Label::Discarded, Label::Cluster)).collect();
    let out = LabeledDataset::new(data.to_vec(), labels, None)?;
    Ok((reduced, out, trace))
}

fn nearest(mix: &GaussianMixture, x: &DVector<f64>) -> Result<usize> {
    let mut best = (0, f64::INFINITY);
    for (k, c) in mix.components().iter().enumerate() {
        let d = c.mahalanobis_sq(x.as_slice())?;
        if d < best.1 {
            best = (k, d);
        }
    }
    Ok(best.0)
}

/// Discard statistics against ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscardSummary {
    pub discarded: usize,
    pub spurious: usize,
    pub spurious_discarded: usize,
    pub inliers: usize,
    pub inliers_discarded: usize,
}

impl DiscardSummary {
    pub fn from_dataset(ds: &LabeledDataset) -> Option<Self> {
        let truth = ds.truth()?;
        let mut s = DiscardSummary { discarded: 0, spurious: 0, spurious_discarded: 0, inliers: 0, inliers_discarded: 0 };
        for (l, t) in ds.labels().iter().zip(truth) {
            let gone = *l == Label::Discarded;
            s.discarded += gone as usize;
            match t {
                Origin::Spurious => {
                    s.spurious += 1;
                    s.spurious_discarded += gone as usize;
                }
                Origin::Component(_) => {
                    s.inliers += 1;
                    s.inliers_discarded += gone as usize;
                }
            }
        }
        Some(s)
    }

    /// Fraction of spurious points discarded.
    pub fn recall(&self) -> f64 {
        ratio(self.spurious_discarded, self.spurious)
    }

    /// Fraction of discarded points that are spurious.
    pub fn precision(&self) -> f64 {
        ratio(self.spurious_discarded, self.discarded)
    }

    pub fn inlier_discard_rate(&self) -> f64 {
        ratio(self.inliers_discarded, self.inliers)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table2_values() {
        let m = table2_mixture();
        assert_eq!(m.weights(), vec![0.2, 0.2, 0.2, 0.2, 0.1, 0.1]);
        assert_eq!(m.component(3).cov()[(0, 1)], -2.0);
        assert_eq!(m.component(4).mean()[0], -7.0);
    }

    #[test]
    fn generation_examples() {
        let ds = generate_table2_data(1000, 100, 20.0, 1).unwrap();
        assert_eq!(ds.len(), 1100);
        let truth = ds.truth().unwrap();
        assert_eq!(truth.iter().filter(|t| **t == Origin::Spurious).count(), 100);
        assert!(ds.points()[1000..].iter().all(|p| p.iter().all(|v| v.abs() <= 10.0)));

        let pure = generate_table2_data(50, 0, 20.0, 1).unwrap();
        assert!(pure.truth().unwrap().iter().all(|t| matches!(t, Origin::Component(_))));
        let spur = generate_table2_data(0, 10, 20.0, 1).unwrap();
        assert!(spur.truth().unwrap().iter().all(|t| *t == Origin::Spurious));

        assert_eq!(generate_table2_data(30, 5, 20.0, 9).unwrap(), generate_table2_data(30, 5, 20.0, 9).unwrap());
        assert!(generate_table2_data(1, 1, 0.0, 1).is_err());
    }

    #[test]
    fn em_single_gaussian_is_moment_estimate() {
        let g = GaussianMixture::normalized(vec![
            GaussianComponent::from_slices(1.0, &[1.0, -2.0], &[2.0, 0.6, 0.6, 1.0]).unwrap()
        ])
        .unwrap();
        let data = g.sample(500, 3).unwrap();
        let fit = em_fit(&data, &EMConfig::new(1, 0)).unwrap();
        let n = data.len() as f64;
        let mean = data.iter().fold(DVector::zeros(2), |a, x| a + x) / n;
        let cov = data.iter().fold(DMatrix::zeros(2, 2), |a, x| a + (x - &mean) * (x - &mean).transpose()) / n;
        let c = fit.mixture.component(0);
        assert!((c.mean() - &mean).amax() < 1e-12);
        assert!((c.cov() - &cov).amax() < 1e-12);
    }

    #[test]
    fn em_likelihood_close_to_generator() {
        let ds = generate_table2_data(1000, 0, 20.0, 5).unwrap();
        let fit = em_fit(ds.points(), &EMConfig::new(6, 5)).unwrap();
        let truth = table2_mixture();
        let n = ds.len() as f64;
        let ll_fit = fit.log_likelihood.last().unwrap() / n;
        let ll_true: f64 = ds.points().iter().map(|x| truth.log_pdf(x.as_slice()).unwrap()).sum::<f64>() / n;
        assert!((ll_fit - ll_true).abs() <= 0.15, "{ll_fit} vs {ll_true}");
    }

    #[test]
    fn em_invariants() {
        let ds = generate_table2_data(400, 40, 20.0, 8).unwrap();
        let fit = em_fit(ds.points(), &EMConfig::new(8, 8)).unwrap();
        for i in 0..ds.len() {
            let row = fit.responsibilities.row(i);
            assert!((row.sum() - 1.0).abs() <= 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
        if fit.reinitialized == 0 && fit.jittered == 0 {
            assert!(fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-8));
        }
        let again = em_fit(ds.points(), &EMConfig::new(8, 8)).unwrap();
        assert_eq!(fit.mixture, again.mixture);
    }

    #[test]
    fn em_separated_clusters() {
        let m = GaussianMixture::normalized(vec![
            GaussianComponent::from_slices(0.5, &[-10.0, 0.0], &[1.0, 0.0, 0.0, 1.0]).unwrap(),
            GaussianComponent::from_slices(0.5, &[10.0, 0.0], &[1.0, 0.0, 0.0, 1.0]).unwrap(),
        ])
        .unwrap();
        let draws = m.sample_labeled(600, 2).unwrap();
        let data: Vec<_> = draws.iter().map(|(x, _)| x.clone()).collect();
        let fit = em_fit(&data, &EMConfig::new(2, 2)).unwrap();
        // labels are defined up to permutation
        let agree = draws.iter().enumerate().filter(|(i, (_, k))| fit.argmax(*i) == *k).count();
        let acc = agree.max(data.len() - agree) as f64 / data.len() as f64;
        assert!(acc >= 0.99);
    }

    #[test]
    fn em_errors() {
        let data = vec![DVector::from_vec(vec![0.0, 0.0])];
        assert!(matches!(em_fit(&data, &EMConfig::new(2, 0)), Err(Error::TooFewComponents { .. })));
        assert!(em_fit(&data, &EMConfig::new(0, 0)).is_err());
        let bad = EMConfig { tol: 0.0, ..EMConfig::new(1, 0) };
        assert!(em_fit(&data, &bad).is_err());
    }

    fn fitted(seed: u64) -> (LabeledDataset, EmFit) {
        let ds = generate_table2_data(1000, 100, 20.0, seed).unwrap();
        let fit = em_fit(ds.points(), &EMConfig::new(15, seed)).unwrap();
        (ds, fit)
    }

    #[test]
    fn reassign_target_equals_size() {
        let (ds, fit) = fitted(3);
        let (red, out, trace) =
            reduce_and_reassign(&fit.mixture, &fit.responsibilities, ds.points(), 15, CostKind::ArklFull).unwrap();
        assert_eq!(red, fit.mixture);
        assert!(trace.steps.is_empty());
        for (i, l) in out.labels().iter().enumerate() {
            assert_eq!(*l, Label::Cluster(fit.argmax(i)));
        }
    }

    #[test]
    fn reassign_paper_configuration() {
        let (ds, fit) = fitted(11);
        let truth = ds.truth().unwrap().to_vec();
        let (_, out, _) =
            reduce_and_reassign(&fit.mixture, &fit.responsibilities, ds.points(), 6, CostKind::RunnallsB).unwrap();
        assert_eq!(out.discarded(), 0);
        let (red, out, trace) =
            reduce_and_reassign(&fit.mixture, &fit.responsibilities, ds.points(), 6, CostKind::ArklFull).unwrap();
        assert_eq!(red.len(), 6);
        assert!(out.labels().iter().all(|l| match l {
            Label::Cluster(k) => *k < 6,
            Label::Discarded => true,
        }));
        if !trace.steps.iter().any(|s| s.chosen.is_prune()) {
            assert_eq!(out.discarded(), 0);
        }
        let s = DiscardSummary::from_dataset(&out.with_truth(truth).unwrap()).unwrap();
        assert!(s.recall() > 0.5, "{s:?}");
    }
}
