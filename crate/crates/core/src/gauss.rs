//! Closed-form primitives for single multivariate Gaussians.
//!
//! Every solve goes through the Cholesky factor cached on the component; the
//! covariance is never inverted explicitly. Weights are carried along for the
//! mixture layer but ignored by every density-level operation here, with the
//! exception of [`moment_match_merge`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tol::{SYMMETRY_RTOL, WEIGHT_MAX_SLACK};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One weighted multivariate Gaussian `w · N(x; μ, Σ)`.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    weight: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl PartialEq for GaussianComponent {
    fn eq(&self, other: &Self) -> bool {
        self.weight == other.weight && self.mean == other.mean && self.cov == other.cov
    }
}

/// Factorizes `cov` after checking shape, finiteness and symmetry.
fn factorize(cov: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if !cov.is_square() {
        return Err(Error::DimensionMismatch { expected: cov.nrows(), found: cov.ncols() });
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let scale = cov.amax();
    let asymmetry = (cov - cov.transpose()).amax();
    if asymmetry > SYMMETRY_RTOL * scale {
        return Err(Error::NotSymmetric { asymmetry });
    }
    let chol = Cholesky::new(cov.clone()).ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l_dirty();
    let mut log_det = 0.0;
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        log_det += 2.0 * d.ln();
    }
    Ok((chol, log_det))
}

fn check_weight(weight: f64) -> Result<()> {
    if !(0.0..=1.0 + WEIGHT_MAX_SLACK).contains(&weight) {
        return Err(Error::InvalidWeight(weight));
    }
    Ok(())
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_weight(weight)?;
        if mean.len() != cov.nrows() {
            return Err(Error::DimensionMismatch { expected: cov.nrows(), found: mean.len() });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let (chol, log_det) = factorize(&cov)?;
        Ok(Self { weight, mean, cov, chol, log_det })
    }

    /// 1-D convenience constructor taking a variance.
    pub fn univariate(weight: f64, mean: f64, variance: f64) -> Result<Self> {
        Self::new(weight, DVector::from_element(1, mean), DMatrix::from_element(1, 1, variance))
    }

    /// Builds from plain slices; `cov` is row-major `k × k`.
    pub fn from_slices(weight: f64, mean: &[f64], cov: &[f64]) -> Result<Self> {
        let k = mean.len();
        if cov.len() != k * k {
            return Err(Error::DimensionMismatch { expected: k * k, found: cov.len() });
        }
        Self::new(weight, DVector::from_column_slice(mean), DMatrix::from_row_slice(k, k, cov))
    }

    /// Same density, different weight.
    pub fn with_weight(&self, weight: f64) -> Result<Self> {
        check_weight(weight)?;
        Ok(Self { weight, ..self.clone() })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `log |Σ|`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        Ok(())
    }

    /// `(x − μ)ᵀ Σ⁻¹ (x − μ)` by forward substitution on the factor.
    fn maha_unchecked(&self, x: &[f64]) -> f64 {
        let l = self.chol.l_dirty();
        let k = self.dim();
        let mut z = vec![0.0; k];
        let mut acc = 0.0;
        for i in 0..k {
            let mut s = x[i] - self.mean[i];
            for j in 0..i {
                s -= l[(i, j)] * z[j];
            }
            z[i] = s / l[(i, i)];
            acc += z[i] * z[i];
        }
        acc
    }

    /// `log N(x; μ, Σ)`, weight excluded.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.log_pdf_unchecked(x))
    }

    pub(crate) fn log_pdf_unchecked(&self, x: &[f64]) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + self.maha_unchecked(x))
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        self.log_pdf(x).map(f64::exp)
    }

    pub fn mahalanobis_sq(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.maha_unchecked(x))
    }

    /// Peak density value `(2π)^{-k/2} |Σ|^{-1/2}`.
    pub fn max_value(&self) -> f64 {
        self.log_max_value().exp()
    }

    pub fn log_max_value(&self) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det)
    }

    /// Differential entropy `½ log |2πeΣ|`.
    pub fn entropy(&self) -> f64 {
        0.5 * (self.dim() as f64 * (LN_2PI + 1.0) + self.log_det)
    }

    /// Solves `Σ X = B`.
    pub(crate) fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Draws `μ + L z` with `z ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z: DVector<f64> = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let l = self.chol.l_dirty();
        let mut out = self.mean.clone();
        for i in 0..self.dim() {
            for j in 0..=i {
                out[i] += l[(i, j)] * z[j];
            }
        }
        out
    }
}

fn same_dim(a: &GaussianComponent, b: &GaussianComponent) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(())
}

/// `log N(x; μ, Σ)` of the component's density (weight excluded).
pub fn log_pdf(c: &GaussianComponent, x: &[f64]) -> Result<f64> {
    c.log_pdf(x)
}

pub fn max_value(c: &GaussianComponent) -> f64 {
    c.max_value()
}

pub fn mahalanobis_sq(c: &GaussianComponent, x: &[f64]) -> Result<f64> {
    c.mahalanobis_sq(x)
}

/// `D_KL(N_from ‖ N_to)` of the normalized densities.
///
/// `½[log(|Σ_to|/|Σ_from|) − k + Tr(Σ_to⁻¹Σ_from) + (μ_to−μ_from)ᵀΣ_to⁻¹(μ_to−μ_from)]`
pub fn kld_gauss(from: &GaussianComponent, to: &GaussianComponent) -> Result<f64> {
    same_dim(from, to)?;
    let k = from.dim() as f64;
    let trace = to.solve(&from.cov).trace();
    let maha = to.maha_unchecked(from.mean.as_slice());
    let kl = 0.5 * (to.log_det - from.log_det - k + trace + maha);
    // rounding can leave −1e-16 for identical inputs
    Ok(kl.max(0.0))
}

/// `N(μ_a; μ_b, Σ_a + Σ_b)` in log space: the inner product `∫ q_a q_b dx`.
pub fn log_inner_product(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    same_dim(a, b)?;
    let sum = &a.cov + &b.cov;
    let (chol, log_det) = factorize(&sum)?;
    let diff = &a.mean - &b.mean;
    let maha = diff.dot(&chol.solve(&diff));
    Ok(-0.5 * (a.dim() as f64 * LN_2PI + log_det + maha))
}

/// Decomposition `N(x; μ_a, Σ_a) · N(x; μ_b, Σ_b) = scale · N(x; μ*, Σ*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductDecomposition {
    pub scale: f64,
    pub log_scale: f64,
    pub mean_star: DVector<f64>,
    pub cov_star: DMatrix<f64>,
}

impl ProductDecomposition {
    /// The normalized factor `N(μ*, Σ*)` as a unit-weight component.
    pub fn to_component(&self) -> Result<GaussianComponent> {
        GaussianComponent::new(1.0, self.mean_star.clone(), self.cov_star.clone())
    }
}

/// Product of two Gaussian densities.
///
/// Uses `μ* = Σ_b S⁻¹ μ_a + Σ_a S⁻¹ μ_b` and `Σ* = Σ_a S⁻¹ Σ_b` with
/// `S = Σ_a + Σ_b`, which equal `μ_a + Σ_a S⁻¹(μ_b − μ_a)` and
/// `Σ_a − Σ_a S⁻¹ Σ_a` without the cancellation of the latter when `Σ_a ≫ Σ_b`.
pub fn product_decompose(a: &GaussianComponent, b: &GaussianComponent) -> Result<ProductDecomposition> {
    same_dim(a, b)?;
    let sum = &a.cov + &b.cov;
    let (chol, log_det) = factorize(&sum)?;
    let diff = &b.mean - &a.mean;
    let maha = diff.dot(&chol.solve(&diff));
    let log_scale = -0.5 * (a.dim() as f64 * LN_2PI + log_det + maha);

    // S⁻¹Σ_b, so Σ_a S⁻¹ Σ_b = Σ_a · (S⁻¹Σ_b)
    let s_inv_b = chol.solve(&b.cov);
    let mut cov_star = &a.cov * &s_inv_b;
    cov_star = 0.5 * (&cov_star + cov_star.transpose());
    // μ* = μ_a + Σ_a S⁻¹ (μ_b − μ_a)
    let mean_star = &a.mean + &a.cov * chol.solve(&diff);

    Ok(ProductDecomposition { scale: log_scale.exp(), log_scale, mean_star, cov_star })
}

/// `∫ N(x; mean, cov) log q(x) dx` for an arbitrary (PSD) moment pair.
pub(crate) fn expected_log_moments(mean: &DVector<f64>, cov: &DMatrix<f64>, of: &GaussianComponent) -> f64 {
    let k = of.dim() as f64;
    let trace = of.solve(cov).trace();
    let maha = of.maha_unchecked(mean.as_slice());
    -0.5 * (k * LN_2PI + of.log_det) - 0.5 * (trace + maha)
}

/// `E_under[log of(x)] = −½log|2πΣ_of| − ½Tr[Σ_of⁻¹(Σ_under + ddᵀ)]`.
pub fn expected_log(under: &GaussianComponent, of: &GaussianComponent) -> Result<f64> {
    same_dim(under, of)?;
    Ok(expected_log_moments(&under.mean, &under.cov, of))
}

/// Moment-matched merge of a weighted pair; preserves total weight, mean and covariance.
pub fn moment_match_merge(a: &GaussianComponent, b: &GaussianComponent) -> Result<GaussianComponent> {
    same_dim(a, b)?;
    let w = a.weight + b.weight;
    if !(w > 0.0) {
        return Err(Error::ZeroTotalWeight);
    }
    let wa = a.weight / w;
    let wb = b.weight / w;
    let mean = wa * &a.mean + wb * &b.mean;
    let d = &a.mean - &b.mean;
    let mut cov = wa * &a.cov + wb * &b.cov + (wa * wb) * (&d * d.transpose());
    cov = 0.5 * (&cov + cov.transpose());
    GaussianComponent::new(w, mean, cov)
}

/// `Σ + ε·I`.
pub fn jitter(cov: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let mut out = cov.clone();
    for i in 0..out.nrows().min(out.ncols()) {
        out[(i, i)] += eps;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, QuadOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uni(w: f64, m: f64, v: f64) -> GaussianComponent {
        GaussianComponent::univariate(w, m, v).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        let mut s = &a * a.transpose() + DMatrix::identity(k, k) * 0.3;
        s = 0.5 * (&s + s.transpose());
        s
    }

    fn random_component(rng: &mut ChaCha8Rng, k: usize) -> GaussianComponent {
        let mean = DVector::from_fn(k, |_, _| rng.random_range(-2.0..2.0));
        GaussianComponent::new(1.0, mean, random_spd(rng, k)).unwrap()
    }

    #[test]
    fn rejects_bad_covariances() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(
            GaussianComponent::new(1.0, DVector::zeros(2), asym),
            Err(Error::NotSymmetric { .. })
        ));
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(
            GaussianComponent::new(1.0, DVector::zeros(2), indef).unwrap_err(),
            Error::NotPositiveDefinite
        );
        assert!(matches!(
            GaussianComponent::univariate(1.5, 0.0, 1.0),
            Err(Error::InvalidWeight(_))
        ));
        assert!(matches!(
            GaussianComponent::new(1.0, DVector::zeros(3), DMatrix::identity(2, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn log_pdf_examples() {
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((uni(1.0, 0.0, 1.0).log_pdf(&[0.0]).unwrap() + half_ln_2pi).abs() < 1e-14);
        assert!((uni(1.0, 2.0, 1.0).log_pdf(&[2.0]).unwrap() + half_ln_2pi).abs() < 1e-14);
        let c = GaussianComponent::from_slices(1.0, &[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let expected = -(2.0 * std::f64::consts::PI).ln() - 1.0;
        assert!((c.log_pdf(&[1.0, 1.0]).unwrap() - expected).abs() < 1e-14);
        assert!((c.log_pdf(&[1.0, 1.0]).unwrap() + 2.8379).abs() < 1e-4);
        assert!(matches!(c.log_pdf(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn kld_examples() {
        let a = uni(1.0, 0.0, 1.0);
        assert_eq!(kld_gauss(&a, &a).unwrap(), 0.0);
        assert!((kld_gauss(&a, &uni(1.0, 2.0, 1.0)).unwrap() - 2.0).abs() < 1e-14);
        let expected = 0.5 * (2f64.ln() - 1.0 + 0.5);
        let got = kld_gauss(&a, &uni(1.0, 0.0, 2.0)).unwrap();
        assert!((got - expected).abs() < 1e-14);
        assert!((got - 0.0966).abs() < 1e-4);
    }

    #[test]
    fn kld_matches_monte_carlo() {
        // N(0,1) ‖ N(0,2): MC estimate of E[log p − log q]
        let from = uni(1.0, 0.0, 1.0);
        let to = uni(1.0, 0.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = from.sample(&mut rng);
            let v = from.log_pdf(x.as_slice()).unwrap() - to.log_pdf(x.as_slice()).unwrap();
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = kld_gauss(&from, &to).unwrap();
        assert!((mean - exact).abs() < 4.0 * se, "mc {mean} ± {se} vs {exact}");
    }

    #[test]
    fn product_examples() {
        let n01 = uni(1.0, 0.0, 1.0);
        let p = product_decompose(&n01, &n01).unwrap();
        assert!((p.scale - 1.0 / (4.0 * std::f64::consts::PI).sqrt()).abs() < 1e-14);
        assert!((p.scale - 0.2821).abs() < 1e-4);
        assert!(p.mean_star[0].abs() < 1e-15);
        assert!((p.cov_star[(0, 0)] - 0.5).abs() < 1e-15);

        let b = uni(1.0, 4.0, 1.0);
        let p = product_decompose(&n01, &b).unwrap();
        assert!((p.mean_star[0] - 2.0).abs() < 1e-14);
        assert!((p.cov_star[(0, 0)] - 0.5).abs() < 1e-14);
        let n_4_0_2 = uni(1.0, 0.0, 2.0).pdf(&[4.0]).unwrap();
        assert!((p.scale - n_4_0_2).abs() < 1e-16);
        let star = p.to_component().unwrap();
        for x in [0.0, 1.0, 2.0, 3.0] {
            let lhs = n01.pdf(&[x]).unwrap() * b.pdf(&[x]).unwrap();
            let rhs = p.scale * star.pdf(&[x]).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs(), "x={x}");
        }
    }

    #[test]
    fn product_identity_2d_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_component(&mut rng, 2);
        let b = random_component(&mut rng, 2);
        let p = product_decompose(&a, &b).unwrap();
        let star = p.to_component().unwrap();
        for _ in 0..100 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let lhs = a.pdf(&x).unwrap() * b.pdf(&x).unwrap();
            let rhs = p.scale * star.pdf(&x).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs());
        }
    }

    #[test]
    fn product_identity_log_space_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..200 {
            let k = 1 + trial % 3;
            let a = random_component(&mut rng, k);
            let b = random_component(&mut rng, k);
            let p = product_decompose(&a, &b).unwrap();
            let star = p.to_component().unwrap();
            let x: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lhs = a.log_pdf(&x).unwrap() + b.log_pdf(&x).unwrap();
            let rhs = p.log_scale + star.log_pdf(&x).unwrap();
            assert!((lhs - rhs).abs() < 1e-9, "trial {trial}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn expected_log_examples() {
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let n01 = uni(1.0, 0.0, 1.0);
        assert!((expected_log(&n01, &n01).unwrap() - (-half_ln_2pi - 0.5)).abs() < 1e-14);
        assert!((expected_log(&n01, &n01).unwrap() + n01.entropy()).abs() < 1e-14);
        let v = expected_log(&n01, &uni(1.0, 3.0, 1.0)).unwrap();
        assert!((v - (-half_ln_2pi - 5.0)).abs() < 1e-14);
        assert!((v + 5.9189).abs() < 1e-4);
        let a = GaussianComponent::from_slices(1.0, &[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = GaussianComponent::from_slices(1.0, &[1.0, 1.0], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let v = expected_log(&a, &b).unwrap();
        assert!((v - (-(2.0 * std::f64::consts::PI).ln() - 2.0)).abs() < 1e-14);
    }

    #[test]
    fn expected_log_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let under = random_component(&mut rng, 2);
        let of = random_component(&mut rng, 2);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = under.sample(&mut rng);
            let v = of.log_pdf(x.as_slice()).unwrap();
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = expected_log(&under, &of).unwrap();
        assert!((mean - exact).abs() < 4.0 * se, "mc {mean} ± {se} vs {exact}");
    }

    #[test]
    fn max_value_examples() {
        assert!((uni(1.0, 0.0, 1.0).max_value() - 0.3989).abs() < 1e-4);
        assert!((uni(1.0, 0.0, 4.0).max_value() - 1.0 / (8.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        let c = GaussianComponent::from_slices(1.0, &[0.0, 0.0], &[1.0, 0.0, 0.0, 4.0]).unwrap();
        assert!((c.max_value() - 1.0 / (4.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert!((c.max_value() - c.pdf(&[0.0, 0.0]).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn max_value_dominates_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = random_component(&mut rng, 3);
        for _ in 0..1000 {
            let x = c.sample(&mut rng);
            assert!(c.log_pdf(x.as_slice()).unwrap() <= c.log_max_value());
        }
    }

    #[test]
    fn moment_match_examples() {
        let a = uni(0.3, 1.0, 2.0);
        let m = moment_match_merge(&a, &a).unwrap();
        assert!((m.weight() - 0.6).abs() < 1e-15);
        assert!((m.mean()[0] - 1.0).abs() < 1e-15);
        assert!((m.cov()[(0, 0)] - 2.0).abs() < 1e-15);

        // w₁ = w₂ = ½, N(∓3, 1): mean (w₂−w₁)μ = 0, var 1 + 4w₁w₂μ² = 10
        let m = moment_match_merge(&uni(0.5, -3.0, 1.0), &uni(0.5, 3.0, 1.0)).unwrap();
        assert_eq!(m.mean()[0], 0.0);
        assert_eq!(m.cov()[(0, 0)], 10.0);

        assert_eq!(
            moment_match_merge(&uni(0.0, 0.0, 1.0), &uni(0.0, 1.0, 1.0)).unwrap_err(),
            Error::ZeroTotalWeight
        );
    }

    #[test]
    fn moment_match_matches_sample_moments_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_component(&mut rng, 2).with_weight(0.3).unwrap();
        let b = random_component(&mut rng, 2).with_weight(0.5).unwrap();
        let merged = moment_match_merge(&a, &b).unwrap();
        let n = 1_000_000;
        let pa = a.weight() / (a.weight() + b.weight());
        let mut mean = DVector::zeros(2);
        let mut second = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let x = if rng.random::<f64>() < pa { a.sample(&mut rng) } else { b.sample(&mut rng) };
            second += &x * x.transpose();
            mean += x;
        }
        mean /= n as f64;
        let cov = second / n as f64 - &mean * mean.transpose();
        let scale = merged.cov().amax();
        for i in 0..2 {
            assert!((mean[i] - merged.mean()[i]).abs() < 1e-2 * scale.sqrt());
            for j in 0..2 {
                assert!((cov[(i, j)] - merged.cov()[(i, j)]).abs() < 1e-2 * scale);
            }
        }
    }

    /// D_KL(pair ‖ single) by quadrature, pair normalized.
    fn pair_fkld(a: &GaussianComponent, b: &GaussianComponent, mean: f64, var: f64) -> f64 {
        let w = a.weight() + b.weight();
        let single = uni(1.0, mean, var);
        let f = |x: f64| {
            let lp = crate::numeric::log_add_exp(
                (a.weight() / w).ln() + a.log_pdf(&[x]).unwrap(),
                (b.weight() / w).ln() + b.log_pdf(&[x]).unwrap(),
            );
            let p = lp.exp();
            if p == 0.0 { 0.0 } else { p * (lp - single.log_pdf(&[x]).unwrap()) }
        };
        let opts = QuadOptions { abs_tol: 1e-13, ..Default::default() };
        integrate(f, -30.0, 30.0, opts).value
    }

    #[test]
    fn moment_match_minimizes_pair_fkld() {
        let a = uni(0.3, -1.0, 0.5);
        let b = uni(0.6, 2.0, 1.5);
        let m = moment_match_merge(&a, &b).unwrap();
        let (mu, var) = (m.mean()[0], m.cov()[(0, 0)]);
        let base = pair_fkld(&a, &b, mu, var);
        for (dm, dv) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3)] {
            assert!(pair_fkld(&a, &b, mu + dm, var + dv) >= base, "({dm}, {dv})");
        }
    }

    #[test]
    fn mahalanobis_examples() {
        let c = uni(1.0, 0.0, 4.0);
        assert_eq!(c.mahalanobis_sq(&[0.0]).unwrap(), 0.0);
        assert!((c.mahalanobis_sq(&[2.0]).unwrap() - 1.0).abs() < 1e-15);
        let c = GaussianComponent::from_slices(1.0, &[1.0, 1.0], &[1.0, 0.0, 0.0, 4.0]).unwrap();
        assert!((c.mahalanobis_sq(&[2.0, 3.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn jitter_adds_to_diagonal() {
        let j = jitter(&DMatrix::identity(2, 2), 0.5);
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 1.5]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn kld_is_nonnegative(m1 in -5.0..5.0f64, m2 in -5.0..5.0f64, v1 in 0.05..10.0f64, v2 in 0.05..10.0f64) {
                let a = uni(1.0, m1, v1);
                let b = uni(1.0, m2, v2);
                let kl = kld_gauss(&a, &b).unwrap();
                prop_assert!(kl >= 0.0);
                prop_assert!(kld_gauss(&a, &a).unwrap() < 1e-14);
            }
        }
    }
}
