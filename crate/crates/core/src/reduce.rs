//! Greedy reduction engines.
//!
//! Every step scores all hypotheses, applies the cheapest one, and updates
//! the [`CostTable`] incrementally. The table keeps only weight-independent
//! kernels between steps (pairwise KLDs, Gram entries, and per-pair merge
//! kernels); weight-dependent costs are reassembled from them after each
//! step. A merge only costs kernel evaluations for the row of the merged
//! component, and a prune costs none, so a full `N → 1` run performs `O(N²)`
//! kernel evaluations for every cost kind.
//!
//! Ties are broken by the [`Hypothesis`] ordering: prunes before merges,
//! then ascending indices.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::costs::{
    arkl_merge_cost, arkl_prune_cost, arkl_prune_from_weights, crude_prune_bound, ise_raw, merge_statistic,
    merge_switched_pair, pairwise_kld_matrix, runnalls_bound, simple_merge_bound, CostKind,
};
use crate::error::{Error, Result};
use crate::gauss::{kld_gauss, log_inner_product, moment_match_merge, GaussianComponent};
use crate::mixture::{GaussianMixture, Hypothesis};

#[derive(Debug, Clone, Default)]
pub struct ReduceOptions {
    /// Keep every hypothesis cost of every step in the trace (`O(N²)` memory per step).
    pub record_all_costs: bool,
    /// Compute kernel rows with rayon. Results are identical to the serial path.
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub chosen: Hypothesis,
    pub cost: f64,
    pub size_after: usize,
    /// Every hypothesis and its cost, in hypothesis order, when requested.
    pub all_costs: Option<Vec<(Hypothesis, f64)>>,
    /// Merges skipped because the merged covariance failed to factorize.
    pub degenerate: Vec<Hypothesis>,
    /// Hypotheses whose literal cost came out negative.
    pub negative: Vec<Hypothesis>,
    /// Kernel evaluations spent deciding this step (table construction included in the first).
    pub evaluations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionTrace {
    pub method: CostKind,
    pub steps: Vec<TraceStep>,
}

impl ReductionTrace {
    pub fn new(method: CostKind) -> Self {
        Self { method, steps: Vec::new() }
    }

    pub fn chosen(&self) -> Vec<Hypothesis> {
        self.steps.iter().map(|s| s.chosen).collect()
    }

    pub fn cost_eval_count(&self) -> u64 {
        cost_eval_count(self)
    }
}

/// Pairwise-statistic evaluations (KLDs, Gaussian inner products, switched
/// divergences, Runnalls bounds) performed during a reduction.
pub fn cost_eval_count(trace: &ReductionTrace) -> u64 {
    trace.steps.iter().map(|s| s.evaluations).sum()
}

/// Weight-independent part of a merge cost. The merged shape depends only on
/// the weight ratio, which renormalization preserves.
#[derive(Debug, Clone, Copy, PartialEq)]
enum PairKernel {
    /// `D_KL(q_I‖q_IJ)`, `D_KL(q_J‖q_IJ)`.
    Runnalls(f64, f64),
    /// Divergences `(a, b)` entering `w log w − w log(w_I e^{−a} + w_J e^{−b})`.
    LogSum(f64, f64),
    /// `⟨q_IJ,q_IJ⟩`, `⟨q_I,q_IJ⟩`, `⟨q_J,q_IJ⟩`.
    Ise(f64, f64, f64),
    /// Merged covariance failed to factorize.
    Degenerate,
}

fn kernel_cost(kernel: PairKernel, wi: f64, wj: f64, gram: Option<&DMatrix<f64>>, i: usize, j: usize) -> f64 {
    let c = match kernel {
        PairKernel::Degenerate => f64::INFINITY,
        PairKernel::Runnalls(a, b) => wi * a + wj * b,
        PairKernel::LogSum(a, b) => merge_statistic(wi, wj, a, b),
        PairKernel::Ise(self_ij, cross_i, cross_j) => {
            let g = gram.expect("gram present for ISE");
            let w = wi + wj;
            // ∫(w_I q_I + w_J q_J − w_IJ q_IJ)²; all other components cancel
            wi * wi * g[(i, i)] + wj * wj * g[(j, j)] + 2.0 * wi * wj * g[(i, j)] + w * w * self_ij
                - 2.0 * w * (wi * cross_i + wj * cross_j)
        }
    };
    if c.is_nan() {
        f64::INFINITY
    } else {
        c
    }
}

/// Evaluates the merge kernel of a pair; returns the kernel and the number of evaluations.
fn pair_kernel(kind: CostKind, a: &GaussianComponent, b: &GaussianComponent) -> Result<(PairKernel, u64)> {
    let merged = match moment_match_merge(a, b) {
        Ok(m) => m,
        Err(Error::NotPositiveDefinite) | Err(Error::NotSymmetric { .. }) | Err(Error::NonFinite) => {
            return Ok((PairKernel::Degenerate, 0))
        }
        Err(e) => return Err(e),
    };
    Ok(match kind {
        CostKind::RunnallsB => (PairKernel::Runnalls(kld_gauss(a, &merged)?, kld_gauss(b, &merged)?), 1),
        CostKind::ArklFull => {
            let (vi, vj) = merge_switched_pair(&merged, a, b)?;
            (PairKernel::LogSum(vi, vj), 2)
        }
        CostKind::ArklSimple => (PairKernel::LogSum(kld_gauss(&merged, a)?, kld_gauss(&merged, b)?), 2),
        CostKind::WilliamsIse => (
            PairKernel::Ise(
                log_inner_product(&merged, &merged)?.exp(),
                log_inner_product(a, &merged)?.exp(),
                log_inner_product(b, &merged)?.exp(),
            ),
            3,
        ),
    })
}

/// Cached statistics driving one greedy reduction.
#[derive(Debug, Clone)]
pub struct CostTable {
    kind: CostKind,
    parallel: bool,
    components: Vec<GaussianComponent>,
    weights: Vec<f64>,
    /// Upper triangle (`i < j`) of merge kernels.
    kernels: Vec<Vec<PairKernel>>,
    /// Upper triangle of merge costs.
    pair_cost: DMatrix<f64>,
    prune_cost: Option<Vec<f64>>,
    /// `[(a, b)] = D_KL(q_a‖q_b)`; ARKL (full) only.
    pairwise_kld: Option<DMatrix<f64>>,
    /// `[(a, b)] = N(μ_a; μ_b, Σ_a + Σ_b)`; Williams only.
    gram: Option<DMatrix<f64>>,
    evaluations: u64,
}

impl CostTable {
    pub fn build(m: &GaussianMixture, kind: CostKind, opts: &ReduceOptions) -> Result<Self> {
        m.ensure_normalized()?;
        let n = m.len();
        let mut table = CostTable {
            kind,
            parallel: opts.parallel,
            components: m.components().to_vec(),
            weights: m.weights(),
            kernels: vec![vec![PairKernel::Degenerate; n]; n],
            pair_cost: DMatrix::from_element(n, n, f64::NAN),
            prune_cost: None,
            pairwise_kld: None,
            gram: None,
            evaluations: 0,
        };
        if kind == CostKind::ArklFull {
            let mut kld = DMatrix::zeros(n, n);
            for a in 0..n {
                for b in 0..n {
                    if a != b {
                        kld[(a, b)] = kld_gauss(&table.components[a], &table.components[b])?;
                        table.evaluations += 1;
                    }
                }
            }
            table.pairwise_kld = Some(kld);
        }
        if kind == CostKind::WilliamsIse {
            let mut gram = DMatrix::zeros(n, n);
            for a in 0..n {
                for b in a..n {
                    let g = log_inner_product(&table.components[a], &table.components[b])?.exp();
                    gram[(a, b)] = g;
                    gram[(b, a)] = g;
                    table.evaluations += 1;
                }
            }
            table.gram = Some(gram);
        }
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        table.fill_kernels(&pairs)?;
        table.refresh_costs()?;
        Ok(table)
    }

    fn fill_kernels(&mut self, pairs: &[(usize, usize)]) -> Result<()> {
        let comps = &self.components;
        let kind = self.kind;
        let results: Vec<Result<(PairKernel, u64)>> = if self.parallel {
            pairs.par_iter().map(|&(i, j)| pair_kernel(kind, &comps[i], &comps[j])).collect()
        } else {
            pairs.iter().map(|&(i, j)| pair_kernel(kind, &comps[i], &comps[j])).collect()
        };
        for (&(i, j), r) in pairs.iter().zip(results) {
            let (k, evals) = r?;
            self.kernels[i][j] = k;
            self.evaluations += evals;
        }
        Ok(())
    }

    /// Recomputes every weight-dependent cost from the cached kernels.
    fn refresh_costs(&mut self) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            for j in i + 1..n {
                self.pair_cost[(i, j)] =
                    kernel_cost(self.kernels[i][j], self.weights[i], self.weights[j], self.gram.as_ref(), i, j);
            }
        }
        self.prune_cost = match self.kind {
            CostKind::RunnallsB => None,
            // the last component carries all the mass
            _ if n < 2 => Some(vec![f64::INFINITY; n]),
            CostKind::ArklSimple => Some(self.weights.iter().map(|&w| crude_prune_bound(w)).collect::<Result<_>>()?),
            CostKind::ArklFull => {
                let kld = self.pairwise_kld.as_ref().expect("kld present");
                Some((0..n).map(|i| arkl_prune_from_weights(&self.weights, i, kld)).collect::<Result<_>>()?)
            }
            CostKind::WilliamsIse => {
                let g = self.gram.as_ref().expect("gram present");
                let w = &self.weights;
                let s: Vec<f64> = (0..n).map(|j| (0..n).map(|i| w[i] * g[(i, j)]).sum()).collect();
                let total: f64 = (0..n).map(|j| w[j] * s[j]).sum();
                Some(
                    (0..n)
                        .map(|j| {
                            let wj = w[j];
                            let gjj = g[(j, j)];
                            let rest = 1.0 - wj;
                            // p − p̂ = w_J (q_J − p̂), p̂ the renormalized survivors
                            let cross = (s[j] - wj * gjj) / rest;
                            let survivors = (total - 2.0 * wj * s[j] + wj * wj * gjj) / (rest * rest);
                            wj * wj * (gjj - 2.0 * cross + survivors)
                        })
                        .collect(),
                )
            }
        };
        Ok(())
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    /// Current mixture size.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Kernel evaluations performed so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn pairwise_kld(&self) -> Option<&DMatrix<f64>> {
        self.pairwise_kld.as_ref()
    }

    pub fn gram(&self) -> Option<&DMatrix<f64>> {
        self.gram.as_ref()
    }

    /// Cost of `h`; `+∞` for degenerate merges.
    pub fn cost(&self, h: Hypothesis) -> Result<f64> {
        h.validate(self.len())?;
        match h {
            Hypothesis::Prune(j) => match &self.prune_cost {
                Some(p) => Ok(p[j]),
                None => Err(Error::HypothesisSetMismatch(h.to_string(), "runnalls (merge-only)")),
            },
            Hypothesis::Merge(i, j) => Ok(self.pair_cost[(i, j)]),
        }
    }

    /// Every hypothesis of this kind's set with its cost, in tie-breaking order.
    pub fn all_costs(&self) -> Vec<(Hypothesis, f64)> {
        let n = self.len();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        if let Some(p) = &self.prune_cost {
            out.extend(p.iter().enumerate().map(|(j, &c)| (Hypothesis::Prune(j), c)));
        }
        for i in 0..n {
            for j in i + 1..n {
                out.push((Hypothesis::Merge(i, j), self.pair_cost[(i, j)]));
            }
        }
        out
    }

    /// Cheapest hypothesis; earlier hypotheses win exact ties.
    pub fn argmin(&self) -> Option<(Hypothesis, f64)> {
        argmin_in_order(self.all_costs())
    }

    fn degenerate(&self) -> Vec<Hypothesis> {
        let n = self.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.kernels[i][j] == PairKernel::Degenerate {
                    out.push(Hypothesis::Merge(i, j));
                }
            }
        }
        out
    }

    /// Brings the table in line with `next = apply(current, h)`.
    pub fn update(&mut self, h: Hypothesis, next: &GaussianMixture) -> Result<()> {
        h.validate(self.len())?;
        if next.len() + 1 != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len() - 1, found: next.len() });
        }
        let removed = match h {
            Hypothesis::Prune(j) => j,
            Hypothesis::Merge(_, j) => j,
        };
        remove_index(&mut self.kernels, removed);
        self.pair_cost = self.pair_cost.clone().remove_row(removed).remove_column(removed);
        if let Some(k) = self.pairwise_kld.take() {
            self.pairwise_kld = Some(k.remove_row(removed).remove_column(removed));
        }
        if let Some(g) = self.gram.take() {
            self.gram = Some(g.remove_row(removed).remove_column(removed));
        }
        self.components = next.components().to_vec();
        self.weights = next.weights();

        if let Hypothesis::Merge(i, _) = h {
            let n = self.len();
            if let Some(kld) = self.pairwise_kld.as_mut() {
                for b in 0..n {
                    if b != i {
                        kld[(i, b)] = kld_gauss(&self.components[i], &self.components[b])?;
                        kld[(b, i)] = kld_gauss(&self.components[b], &self.components[i])?;
                        self.evaluations += 2;
                    }
                }
            }
            if let Some(g) = self.gram.as_mut() {
                for b in 0..n {
                    let v = log_inner_product(&self.components[i], &self.components[b])?.exp();
                    g[(i, b)] = v;
                    g[(b, i)] = v;
                    self.evaluations += 1;
                }
            }
            let pairs: Vec<(usize, usize)> = (0..n).filter(|&b| b != i).map(|b| (i.min(b), i.max(b))).collect();
            self.fill_kernels(&pairs)?;
        }
        self.refresh_costs()
    }
}

fn remove_index(kernels: &mut Vec<Vec<PairKernel>>, idx: usize) {
    kernels.remove(idx);
    for row in kernels.iter_mut() {
        row.remove(idx);
    }
}

fn argmin_in_order(costs: impl IntoIterator<Item = (Hypothesis, f64)>) -> Option<(Hypothesis, f64)> {
    let mut best: Option<(Hypothesis, f64)> = None;
    for (h, c) in costs {
        if c.is_nan() {
            continue;
        }
        match best {
            Some((_, bc)) if !(c < bc) => {}
            _ => best = Some((h, c)),
        }
    }
    best.filter(|(_, c)| c.is_finite())
}

fn check_target(m: &GaussianMixture, target: usize) -> Result<()> {
    m.ensure_normalized()?;
    if target == 0 || target > m.len() {
        return Err(Error::InvalidTarget { target, size: m.len() });
    }
    Ok(())
}

/// Greedily reduces `m` to `target` components.
pub fn reduce(
    m: &GaussianMixture,
    target: usize,
    kind: CostKind,
    opts: &ReduceOptions,
) -> Result<(GaussianMixture, ReductionTrace)> {
    check_target(m, target)?;
    let mut trace = ReductionTrace::new(kind);
    if target == m.len() {
        return Ok((m.clone(), trace));
    }
    let mut table = CostTable::build(m, kind, opts)?;
    let mut current = m.clone();
    let mut spent = 0;
    while current.len() > target {
        let all = table.all_costs();
        let (chosen, cost) = argmin_in_order(all.iter().copied()).ok_or_else(|| {
            Error::InvalidArgument(format!("no finite-cost hypothesis at size {}", current.len()))
        })?;
        let negative = all.iter().filter(|(_, c)| *c < 0.0).map(|(h, _)| *h).collect();
        let degenerate = table.degenerate();
        let next = current.apply(chosen)?;
        // evaluations made while updating belong to the next decision
        let evaluations = table.evaluations() - spent;
        spent = table.evaluations();
        if next.len() > target {
            table.update(chosen, &next)?;
        }
        trace.steps.push(TraceStep {
            chosen,
            cost,
            size_after: next.len(),
            all_costs: opts.record_all_costs.then_some(all),
            degenerate,
            negative,
            evaluations,
        });
        current = next;
    }
    Ok((current, trace))
}

/// Reference engine: every hypothesis cost recomputed from scratch at every
/// step through the public cost functions (Williams via full ISE against the
/// reduced mixture). Same hypothesis sets and tie-breaking as [`reduce`];
/// `O(N⁴)` per step for Williams.
pub fn reduce_reference(m: &GaussianMixture, target: usize, kind: CostKind) -> Result<(GaussianMixture, ReductionTrace)> {
    check_target(m, target)?;
    let mut trace = ReductionTrace::new(kind);
    let mut current = m.clone();
    while current.len() > target {
        let mut evaluations = 0u64;
        let hyps = current.enumerate_hypotheses(kind.includes_pruning())?;
        let kld = if kind == CostKind::ArklFull {
            let n = current.len() as u64;
            evaluations += n * (n - 1);
            Some(pairwise_kld_matrix(&current)?)
        } else {
            None
        };
        let mut costs = Vec::with_capacity(hyps.len());
        let mut degenerate = Vec::new();
        for &h in &hyps {
            let c = match (kind, h) {
                (CostKind::ArklFull, Hypothesis::Prune(i)) => arkl_prune_cost(&current, i, kld.as_ref().unwrap()),
                (CostKind::ArklSimple, Hypothesis::Prune(i)) => crude_prune_bound(current.component(i).weight()),
                (CostKind::WilliamsIse, _) => match current.apply(h) {
                    Ok(reduced) => ise_raw(&current, &reduced, &mut evaluations),
                    Err(Error::NotPositiveDefinite) => Ok(f64::INFINITY),
                    Err(e) => Err(e),
                },
                (_, Hypothesis::Merge(i, j)) => {
                    let (a, b) = (current.component(i), current.component(j));
                    let r = match kind {
                        CostKind::RunnallsB => {
                            evaluations += 1;
                            runnalls_bound(a, b)
                        }
                        CostKind::ArklFull => {
                            evaluations += 2;
                            arkl_merge_cost(a, b)
                        }
                        _ => {
                            evaluations += 2;
                            simple_merge_bound(a, b)
                        }
                    };
                    match r {
                        Err(Error::NotPositiveDefinite) => Ok(f64::INFINITY),
                        other => other,
                    }
                }
                (CostKind::RunnallsB, Hypothesis::Prune(_)) => unreachable!("merge-only set"),
            }?;
            if c == f64::INFINITY {
                degenerate.push(h);
            }
            costs.push((h, c));
        }
        let (chosen, cost) = argmin_in_order(costs.iter().copied())
            .ok_or_else(|| Error::InvalidArgument(format!("no finite-cost hypothesis at size {}", current.len())))?;
        let next = current.apply(chosen)?;
        trace.steps.push(TraceStep {
            chosen,
            cost,
            size_after: next.len(),
            all_costs: Some(costs.clone()),
            degenerate,
            negative: costs.iter().filter(|(_, c)| *c < 0.0).map(|(h, _)| *h).collect(),
            evaluations,
        });
        current = next;
    }
    Ok((current, trace))
}

/// Replays a list of hypotheses on `m`.
pub fn replay(m: &GaussianMixture, steps: &[Hypothesis]) -> Result<GaussianMixture> {
    steps.iter().try_fold(m.clone(), |cur, &h| cur.apply(h))
}
