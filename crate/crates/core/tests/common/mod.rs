//! Test-side oracles, written without the library's numerics.
#![allow(dead_code)]

use gmreduce::{GaussianComponent, GaussianMixture};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Plain univariate normal density.
pub fn normal(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (SQRT_2PI * var.sqrt())
}

pub fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -(x - mean) * (x - mean) / (2.0 * var) - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
}

/// `(weight, mean, variance)` of a 1-D component.
pub fn parts(c: &GaussianComponent) -> (f64, f64, f64) {
    (c.weight(), c.mean()[0], c.cov()[(0, 0)])
}

pub fn mix_ln_pdf(m: &GaussianMixture, x: f64) -> f64 {
    let terms: Vec<f64> = m
        .components()
        .iter()
        .map(|c| {
            let (w, mu, v) = parts(c);
            w.ln() + ln_normal(x, mu, v)
        })
        .collect();
    let hi = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + terms.iter().map(|t| (t - hi).exp()).sum::<f64>().ln()
}

pub fn mix_pdf(m: &GaussianMixture, x: f64) -> f64 {
    m.components()
        .iter()
        .map(|c| {
            let (w, mu, v) = parts(c);
            w * normal(x, mu, v)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
}

/// Adaptive Simpson with Richardson correction on `[a, b]`.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, eps: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(&f, a, b, fa, fm, fb, whole, eps, 48)
}

/// Adaptive Simpson over consecutive break points, split into unit-ish panels
/// so narrow features are not skipped by the initial samples.
pub fn integrate<F: Fn(f64) -> f64>(f: F, breaks: &[f64], eps: f64) -> f64 {
    let mut pts: Vec<f64> = breaks.to_vec();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut total = 0.0;
    let panels: Vec<(f64, f64)> = pts
        .windows(2)
        .flat_map(|w| {
            let k = ((w[1] - w[0]) / 0.5).ceil().max(1.0) as usize;
            let h = (w[1] - w[0]) / k as f64;
            (0..k).map(move |i| (w[0] + i as f64 * h, if i + 1 == k { w[1] } else { w[0] + (i + 1) as f64 * h }))
        })
        .collect();
    let per = eps / panels.len() as f64;
    for (a, b) in panels {
        total += simpson(&f, a, b, per);
    }
    total
}

/// Means ± 12σ and the means themselves, for every component.
pub fn envelope(ms: &[&GaussianMixture]) -> Vec<f64> {
    let mut out = Vec::new();
    for m in ms {
        for c in m.components() {
            let (_, mu, v) = parts(c);
            out.extend([mu - 12.0 * v.sqrt(), mu, mu + 12.0 * v.sqrt()]);
        }
    }
    out
}

/// `D_KL(q ‖ p)` for 1-D mixtures.
pub fn kl_1d(q: &GaussianMixture, p: &GaussianMixture, eps: f64) -> f64 {
    integrate(
        |x| {
            let lq = mix_ln_pdf(q, x);
            if lq == f64::NEG_INFINITY {
                0.0
            } else {
                lq.exp() * (lq - mix_ln_pdf(p, x))
            }
        },
        &envelope(&[q, p]),
        eps,
    )
}

pub fn ise_1d(p: &GaussianMixture, q: &GaussianMixture, eps: f64) -> f64 {
    integrate(|x| (mix_pdf(p, x) - mix_pdf(q, x)).powi(2), &envelope(&[p, q]), eps)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_1d<R: Rng>(rng: &mut R, n: usize) -> GaussianMixture {
    let comps = (0..n)
        .map(|_| {
            GaussianComponent::univariate(
                rng.random_range(0.05..1.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(0.2..3.0),
            )
            .unwrap()
        })
        .collect();
    GaussianMixture::normalized(comps).unwrap()
}

/// Random `dim`-dimensional mixture with well-conditioned covariances `AAᵀ + 0.2 I`.
pub fn random_nd<R: Rng>(rng: &mut R, n: usize, dim: usize) -> GaussianMixture {
    let comps = (0..n)
        .map(|_| {
            let mean: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
            let a = nalgebra::DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
            let cov = &a * a.transpose() + nalgebra::DMatrix::identity(dim, dim) * 0.2;
            GaussianComponent::new(rng.random_range(0.05..1.0), nalgebra::DVector::from_vec(mean), cov).unwrap()
        })
        .collect();
    GaussianMixture::normalized(comps).unwrap()
}
