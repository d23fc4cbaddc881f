//! File formats: mixtures and traces as JSON, point clouds and sweeps as CSV.

use std::fs;
use std::path::Path;

use gmreduce::cluster::{Label, LabeledDataset, Origin};
use gmreduce::sweep::SweepRow;
use gmreduce::{CostKind, GaussianComponent, GaussianMixture, Hypothesis, ReductionTrace};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::CliError;

const SYMMETRY_TOL: f64 = 1e-9;
const WEIGHT_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFile {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major, `dim` rows of `dim` entries.
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFile {
    pub dim: usize,
    pub components: Vec<ComponentFile>,
}

impl MixtureFile {
    pub fn from_mixture(m: &GaussianMixture) -> Self {
        let components = m
            .components()
            .iter()
            .map(|c| ComponentFile {
                weight: c.weight(),
                mean: c.mean().iter().copied().collect(),
                cov: c.cov().row_iter().map(|r| r.iter().copied().collect()).collect(),
            })
            .collect();
        MixtureFile { dim: m.dim(), components }
    }

    /// Validates and builds the mixture. Near-symmetric covariances are
    /// symmetrized; weights summing to within 1e-6 of one are renormalized.
    pub fn to_mixture(&self) -> Result<GaussianMixture, CliError> {
        let k = self.dim;
        if k == 0 {
            return Err(CliError::Validation("dim must be at least 1".into()));
        }
        if self.components.is_empty() {
            return Err(CliError::Validation("mixture has no components".into()));
        }
        let mut comps = Vec::with_capacity(self.components.len());
        for (idx, c) in self.components.iter().enumerate() {
            let at = |msg: String| CliError::Validation(format!("component {}: {msg}", idx + 1));
            if c.mean.len() != k {
                return Err(at(format!("mean has {} entries, expected {k}", c.mean.len())));
            }
            if c.cov.len() != k || c.cov.iter().any(|r| r.len() != k) {
                return Err(at(format!("cov must be {k} rows of {k} entries")));
            }
            let raw = DMatrix::from_fn(k, k, |i, j| c.cov[i][j]);
            for i in 0..k {
                for j in 0..i {
                    let (a, b) = (raw[(i, j)], raw[(j, i)]);
                    if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                        return Err(at(format!("cov not symmetric at ({}, {}): {a} vs {b}", i + 1, j + 1)));
                    }
                }
            }
            let cov = if raw == raw.transpose() { raw } else { (&raw + raw.transpose()) * 0.5 };
            let comp = GaussianComponent::new(c.weight, DVector::from_column_slice(&c.mean), cov)
                .map_err(|e| at(e.to_string()))?;
            if !(c.weight > 0.0) {
                return Err(at(format!("weight {} must be positive", c.weight)));
            }
            comps.push(comp);
        }
        let sum: f64 = comps.iter().map(|c| c.weight()).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(CliError::Validation(format!("weights sum to {sum}, expected 1")));
        }
        let m = GaussianMixture::new(comps).map_err(|e| CliError::Validation(e.to_string()))?;
        if sum == 1.0 || (sum - 1.0).abs() <= 4.0 * f64::EPSILON {
            Ok(m)
        } else {
            log::warn!("weights sum to {sum}; renormalized");
            m.renormalize().map_err(|e| CliError::Validation(e.to_string()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFile {
    /// `"prune"` or `"merge"`.
    pub action: String,
    /// 1-based component indices.
    pub indices: Vec<usize>,
    pub cost: f64,
    pub size_after: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub negative_cost: bool,
}

impl StepFile {
    pub fn hypothesis(&self) -> Result<Hypothesis, CliError> {
        let bad = || CliError::Validation(format!("invalid step {} {:?}", self.action, self.indices));
        match (self.action.as_str(), self.indices.as_slice()) {
            ("prune", &[j]) if j >= 1 => Ok(Hypothesis::Prune(j - 1)),
            ("merge", &[i, j]) if i >= 1 && j >= 1 && i != j => Ok(Hypothesis::merge(i - 1, j - 1)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub method: String,
    pub steps: Vec<StepFile>,
    pub final_mixture: MixtureFile,
}

impl TraceFile {
    pub fn new(trace: &ReductionTrace, reduced: &GaussianMixture) -> Self {
        let steps = trace
            .steps
            .iter()
            .map(|s| {
                let (action, indices) = match s.chosen {
                    Hypothesis::Prune(j) => ("prune", vec![j + 1]),
                    Hypothesis::Merge(i, j) => ("merge", vec![i + 1, j + 1]),
                };
                StepFile {
                    action: action.into(),
                    indices,
                    cost: s.cost,
                    size_after: s.size_after,
                    negative_cost: s.cost < 0.0,
                }
            })
            .collect();
        TraceFile { method: trace.method.name().into(), steps, final_mixture: MixtureFile::from_mixture(reduced) }
    }

    pub fn method(&self) -> Result<CostKind, CliError> {
        self.method.parse().map_err(|e: gmreduce::Error| CliError::Validation(e.to_string()))
    }

    /// Applies the recorded steps to `input`.
    pub fn replay(&self, input: &GaussianMixture) -> Result<GaussianMixture, CliError> {
        let mut m = input.clone();
        for (k, s) in self.steps.iter().enumerate() {
            m = m
                .apply(s.hypothesis()?)
                .map_err(|e| CliError::Numerical(format!("replay step {}: {e}", k + 1)))?;
        }
        Ok(m)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn read_mixture(path: &Path) -> Result<GaussianMixture, CliError> {
    read_json::<MixtureFile>(path)?.to_mixture().map_err(|e| match e {
        CliError::Validation(msg) => CliError::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record([
        "mu",
        "exact_prune_rkld",
        "crude_bound",
        "R02",
        "exact_merge_rkld",
        "simple_merge_bound",
        "R12",
        "converged",
    ])
    .map_err(io)?;
    for r in rows {
        w.write_record([
            r.mu.to_string(),
            r.exact_prune_rkld.to_string(),
            r.crude_bound.to_string(),
            r.r02.to_string(),
            r.exact_merge_rkld.to_string(),
            r.simple_merge_bound.to_string(),
            r.r12.to_string(),
            r.converged.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// Point coordinates and, when present, their true origins.
pub type Points = (Vec<DVector<f64>>, Option<Vec<Origin>>);

/// Reads points from CSV with columns `x1..xk` and an optional `truth`
/// column (1-based component index or `spurious`). Other columns are ignored.
pub fn read_points(path: &Path) -> Result<Points, CliError> {
    let bad = |msg: String| CliError::Validation(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let mut coords = Vec::new();
    for k in 1.. {
        match headers.iter().position(|h| h == format!("x{k}")) {
            Some(p) => coords.push(p),
            None => break,
        }
    }
    if coords.is_empty() {
        return Err(bad("no x1 column".into()));
    }
    let truth_col = headers.iter().position(|h| h == "truth");
    let mut points = Vec::new();
    let mut truth = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let row = line + 2;
        let x = coords
            .iter()
            .map(|&c| {
                let v: f64 = rec.get(c).unwrap_or("").trim().parse().map_err(|_| bad(format!("row {row}: bad coordinate")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(bad(format!("row {row}: non-finite coordinate")))
                }
            })
            .collect::<Result<Vec<f64>, CliError>>()?;
        points.push(DVector::from_vec(x));
        if let Some(t) = truth_col {
            let field = rec.get(t).unwrap_or("").trim();
            truth.push(match field {
                "spurious" => Origin::Spurious,
                s => match s.parse::<usize>() {
                    Ok(k) if k >= 1 => Origin::Component(k - 1),
                    _ => return Err(bad(format!("row {row}: bad truth {s:?}"))),
                },
            });
        }
    }
    if points.is_empty() {
        return Err(bad("no points".into()));
    }
    Ok((points, truth_col.map(|_| truth)))
}

pub fn write_points(path: &Path, ds: &LabeledDataset) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let dim = ds.points().first().map_or(0, |p| p.len());
    let mut header: Vec<String> = (1..=dim).map(|k| format!("x{k}")).collect();
    header.push("label".into());
    if ds.truth().is_some() {
        header.push("truth".into());
    }
    w.write_record(&header).map_err(io)?;
    for (i, p) in ds.points().iter().enumerate() {
        let mut rec: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        rec.push(match ds.labels()[i] {
            Label::Cluster(k) => (k + 1).to_string(),
            Label::Discarded => "discarded".into(),
        });
        if let Some(t) = ds.truth() {
            rec.push(match t[i] {
                Origin::Component(k) => (k + 1).to_string(),
                Origin::Spurious => "spurious".into(),
            });
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}
