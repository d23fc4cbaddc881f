#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use gmreduce::cluster::{
    em_fit, generate_table2_data, reduce_and_reassign, DiscardSummary, EMConfig, LabeledDataset, Label,
};
use gmreduce::costs::{ise_analytic, mc_kld};
use gmreduce::sweep::sweep;
use gmreduce::{reduce, CostKind, Error, ReduceOptions};
use serde_json::json;

use crate::io::{read_json, read_mixture, read_points, write_json, write_points, write_sweep, MixtureFile, TraceFile};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("EM failed: {0}")]
    Em(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Em(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Em(_) => CliError::Em(msg),
            Error::NotPositiveDefinite
            | Error::NonFinite
            | Error::NotSymmetric { .. }
            | Error::Underflow { .. }
            | Error::PruneAllMass { .. } => CliError::Numerical(msg),
            _ => CliError::Validation(msg),
        }
    }
}

#[derive(Parser)]
#[command(name = "gmreduce", version, about = "Gaussian mixture reduction by pruning and merging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Greedily reduce a mixture to a target number of components.
    Reduce(ReduceArgs),
    /// Report ISE and Monte Carlo forward/reverse KL between two mixtures.
    Divergence(DivergenceArgs),
    /// Emit divergence curves for w1 N(-mu, 1) + (1 - w1) N(mu, 1) as CSV.
    Sweep(SweepArgs),
    /// Over-cluster points with EM, then reduce, discarding points of pruned components.
    Cluster(ClusterArgs),
    /// Apply a recorded trace to a mixture and check it reproduces the trace's final mixture.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    /// Optionally write the replayed mixture (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReduceArgs {
    /// Input mixture (JSON).
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// runnalls | williams | arkl | arkl-simple
    #[arg(long)]
    method: CostKind,
    #[arg(long)]
    target: usize,
    /// Reduced mixture (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Optional trace (JSON).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Evaluate kernel rows on the rayon pool.
    #[arg(long)]
    parallel: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum Measure {
    Ise,
    Fkld,
    Rkld,
}

#[derive(Args)]
struct DivergenceArgs {
    #[arg(long)]
    p: PathBuf,
    #[arg(long)]
    q: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ise,fkld,rkld")]
    measures: Vec<Measure>,
    #[arg(long, default_value_t = 100_000)]
    mc_samples: usize,
    /// Generated and printed when omitted.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 0.8)]
    w1: f64,
    #[arg(long, default_value_t = 0.0)]
    mu_min: f64,
    #[arg(long, default_value_t = 6.0)]
    mu_max: f64,
    #[arg(long, default_value_t = 61)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Debug)]
struct GenSpec {
    n: usize,
    m: usize,
    side: f64,
}

impl FromStr for GenSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut spec = GenSpec { n: 1000, m: 100, side: 20.0 };
        for part in s.split(',').filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| format!("expected key=value, got `{part}`"))?;
            let bad = |_| format!("bad value for {key}: `{value}`");
            match key.trim() {
                "n" => spec.n = value.trim().parse().map_err(bad)?,
                "m" => spec.m = value.trim().parse().map_err(bad)?,
                "side" => spec.side = value.trim().parse().map_err(|_| format!("bad value for side: `{value}`"))?,
                other => return Err(format!("unknown key `{other}` (expected n, m, side)")),
            }
        }
        Ok(spec)
    }
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["data", "gen"])))]
struct ClusterArgs {
    /// Points CSV with columns x1..xk and optional truth.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate the six-cluster benchmark: `n=1000,m=100,side=20`.
    #[arg(long)]
    gen: Option<GenSpec>,
    /// Number of EM components.
    #[arg(long, default_value_t = 15)]
    over: usize,
    #[arg(long, default_value_t = 6)]
    target: usize,
    #[arg(long, default_value = "arkl")]
    method: CostKind,
    /// Output files are written as `<prefix>_points.csv`, `<prefix>_fitted.json`, ...
    #[arg(long)]
    out_prefix: PathBuf,
    /// Seeds both data generation and EM. Generated and printed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

fn cmd_reduce(a: ReduceArgs) -> Result<(), CliError> {
    let m = read_mixture(&a.input)?;
    let opts = ReduceOptions { parallel: a.parallel, ..Default::default() };
    let (reduced, trace) = reduce(&m, a.target, a.method, &opts)?;
    for (k, s) in trace.steps.iter().enumerate() {
        if s.cost < 0.0 {
            log::warn!("step {}: {} has negative cost {:e}", k + 1, s.chosen, s.cost);
        }
        for h in &s.degenerate {
            log::warn!("step {}: {h} skipped, merged covariance not positive definite", k + 1);
        }
    }
    write_json(&a.out, &MixtureFile::from_mixture(&reduced))?;
    if let Some(path) = &a.trace {
        write_json(path, &TraceFile::new(&trace, &reduced))?;
    }
    Ok(())
}

fn cmd_divergence(a: DivergenceArgs) -> Result<(), CliError> {
    let p = read_mixture(&a.p)?;
    let q = read_mixture(&a.q)?;
    if p.dim() != q.dim() {
        return Err(CliError::Validation(format!("dimension mismatch: p is {}-D, q is {}-D", p.dim(), q.dim())));
    }
    let seed = resolve_seed(a.seed);
    let mut out = serde_json::Map::new();
    for m in &a.measures {
        let (name, value, se) = match m {
            Measure::Ise => ("ise", ise_analytic(&p, &q)?, 0.0),
            Measure::Fkld => {
                let e = mc_kld(&p, &q, a.mc_samples, seed)?;
                ("fkld", e.value, e.std_error)
            }
            Measure::Rkld => {
                let e = mc_kld(&q, &p, a.mc_samples, seed)?;
                ("rkld", e.value, e.std_error)
            }
        };
        out.insert(name.into(), json!({ "value": value, "std_error": se }));
    }
    out.insert("seed".into(), json!(seed));
    out.insert("mc_samples".into(), json!(a.mc_samples));
    println!("{}", serde_json::to_string_pretty(&out).map_err(|e| CliError::Io(e.to_string()))?);
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), CliError> {
    if !(a.w1 > 0.0 && a.w1 < 1.0) {
        return Err(CliError::Validation(format!("w1 must lie in (0, 1), got {}", a.w1)));
    }
    let rows = sweep(a.w1, a.mu_min, a.mu_max, a.steps)?;
    let unconverged: Vec<f64> = rows.iter().filter(|r| !r.converged).map(|r| r.mu).collect();
    if !unconverged.is_empty() {
        log::warn!("{} rows did not meet the quadrature tolerance (mu = {unconverged:?})", unconverged.len());
    }
    write_sweep(&a.out, &rows)
}

fn cmd_replay(a: ReplayArgs) -> Result<(), CliError> {
    let m = read_mixture(&a.input)?;
    let trace: TraceFile = read_json(&a.trace)?;
    let method = trace.method()?;
    if method == CostKind::RunnallsB && trace.steps.iter().any(|s| s.action == "prune") {
        return Err(CliError::Validation("runnalls trace contains a prune step".into()));
    }
    let replayed = trace.replay(&m)?;
    let file = MixtureFile::from_mixture(&replayed);
    if file != trace.final_mixture {
        return Err(CliError::Numerical("replayed mixture differs from the trace's final mixture".into()));
    }
    if let Some(out) = &a.out {
        write_json(out, &file)?;
    }
    println!("replayed {} steps ({method}); final mixture matches", trace.steps.len());
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_cluster(a: ClusterArgs) -> Result<(), CliError> {
    let seed = resolve_seed(a.seed);
    let (points, truth) = match (&a.data, &a.gen) {
        (Some(path), None) => read_points(path)?,
        (None, Some(g)) => {
            let ds = generate_table2_data(g.n, g.m, g.side, seed)?;
            (ds.points().to_vec(), ds.truth().map(|t| t.to_vec()))
        }
        _ => return Err(CliError::Validation("exactly one of --data and --gen is required".into())),
    };
    if a.target == 0 || a.target > a.over {
        return Err(CliError::Validation(format!("target {} must lie in 1..={}", a.target, a.over)));
    }
    let cfg = EMConfig { n_clusters: a.over, max_iters: a.max_iters, tol: a.tol, seed, jitter: 1e-6 };
    let fit = em_fit(&points, &cfg).map_err(|e| match e {
        Error::InvalidArgument(_) | Error::TooFewComponents { .. } | Error::DimensionMismatch { .. } => {
            CliError::Validation(e.to_string())
        }
        other => CliError::Em(other.to_string()),
    })?;
    if !fit.converged {
        log::warn!("EM stopped after {} iterations without meeting tol {}", fit.iterations, a.tol);
    }
    let (reduced, labeled, trace) =
        reduce_and_reassign(&fit.mixture, &fit.responsibilities, &points, a.target, a.method)?;
    let labeled: LabeledDataset = match truth {
        Some(t) => labeled.with_truth(t)?,
        None => labeled,
    };

    if let Some(dir) = a.out_prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    write_points(&with_suffix(&a.out_prefix, "_points.csv"), &labeled)?;
    write_json(&with_suffix(&a.out_prefix, "_fitted.json"), &MixtureFile::from_mixture(&fit.mixture))?;
    write_json(&with_suffix(&a.out_prefix, "_reduced.json"), &MixtureFile::from_mixture(&reduced))?;
    write_json(&with_suffix(&a.out_prefix, "_trace.json"), &TraceFile::new(&trace, &reduced))?;

    let clusters = labeled.labels().iter().filter(|l| matches!(l, Label::Cluster(_))).count();
    let mut summary = json!({
        "seed": seed,
        "method": a.method.name(),
        "points": labeled.len(),
        "over": a.over,
        "target": a.target,
        "em": {
            "iterations": fit.iterations,
            "converged": fit.converged,
            "reinitialized": fit.reinitialized,
            "jittered": fit.jittered,
            "log_likelihood": fit.log_likelihood.last(),
        },
        "assigned": clusters,
        "discarded": labeled.discarded(),
    });
    if let Some(s) = DiscardSummary::from_dataset(&labeled) {
        summary["spurious"] = json!(s.spurious);
        summary["spurious_discarded"] = json!(s.spurious_discarded);
        summary["inliers_discarded"] = json!(s.inliers_discarded);
        summary["spurious_recall"] = json!(s.recall());
        summary["spurious_precision"] = json!(s.precision());
    }
    write_json(&with_suffix(&a.out_prefix, "_summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Reduce(a) => cmd_reduce(a),
        Command::Divergence(a) => cmd_divergence(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Replay(a) => cmd_replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
