//! JSON experiment configurations, multi-seed runs and the benchmark summary.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apps::mcp::{mcp_run, rmse, McpInstance, McpRunOptions, McpVariant};
use crate::apps::nmf::{sparse_nmf_run, NmfRunOptions, NmfVariant, SparseNmfInstance, DEFAULT_KAPPA};
use crate::apps::synth::{synthesize_mcp, synthesize_nmf, McpSynthSpec, NmfSynthSpec};
use crate::error::{Error, Result};
use crate::extrapolation::{DEFAULT_C, DEFAULT_NU};
use crate::io::{format_g17, load_dense_matrix, load_ratings, split_train_test, write_metrics, RatingsFormat};
use crate::solver::{MonitorLevel, RunLog, SolverOptions, StopReason};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum App {
    Nmf,
    Mcp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// Dense matrix, comma or whitespace separated.
    Csv,
    MatrixMarket,
    DoubleColon,
    Tsv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthesize {
        rows: usize,
        cols: usize,
        rank: usize,
        #[serde(default)]
        noise: f64,
        /// Observed fraction (matrix completion only).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        density: Option<f64>,
        /// Planted sparsity (NMF only).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sparsity: Option<usize>,
        /// Instance seed; the run seed is used when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    File {
        path: PathBuf,
        format: DataFormat,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Titan,
    Palm,
    TitanExtra,
    TitanNo,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Titan => "titan",
            Algorithm::Palm => "palm",
            Algorithm::TitanExtra => "titan_extra",
            Algorithm::TitanNo => "titan_no",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}
fn default_c() -> f64 {
    DEFAULT_C
}
fn default_nu() -> f64 {
    DEFAULT_NU
}
fn default_lambda() -> f64 {
    crate::apps::mcp::DEFAULT_LAMBDA
}
fn default_theta() -> f64 {
    crate::apps::mcp::DEFAULT_THETA
}
fn default_train_fraction() -> f64 {
    0.7
}
fn default_rmse_every() -> usize {
    10
}
fn default_tol() -> Option<f64> {
    Some(1e-9)
}
fn default_monitor() -> MonitorLevel {
    MonitorLevel::Off
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub app: App,
    pub data: DataSource,
    pub variants: Vec<Algorithm>,
    pub rank: usize,
    /// Per-column sparsity of `U` (NMF); `⌈0.25 r⌉` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<usize>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Essentially cyclic repeat counts `[p, q]` (NMF).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<[usize; 2]>,
    #[serde(default)]
    pub restart: bool,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_rmse_every")]
    pub rmse_every: usize,
    #[serde(default = "default_tol")]
    pub stop_tolerance: Option<f64>,
    #[serde(default = "default_monitor")]
    pub monitor: MonitorLevel,
    pub seeds: Vec<u64>,
    pub budget: Budget,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
            other => other,
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes a relative data path relative to the config's directory when
    /// it does not exist relative to the working directory.
    fn resolve_paths(&mut self, base: &Path) {
        if let DataSource::File { path, .. } = &mut self.data {
            if path.is_relative() && !path.exists() && base.join(&*path).exists() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.variants.is_empty() {
            return bad("variants must not be empty".into());
        }
        for v in &self.variants {
            let ok = match self.app {
                App::Nmf => matches!(v, Algorithm::Titan | Algorithm::Palm),
                App::Mcp => matches!(v, Algorithm::TitanExtra | Algorithm::TitanNo | Algorithm::Palm),
            };
            if !ok {
                return bad(format!("variant {} does not apply to {:?}", v.name(), self.app));
            }
        }
        if self.rank == 0 {
            return bad("rank must be positive".into());
        }
        if !(self.kappa >= 1.0) {
            return bad(format!("kappa must be at least 1, got {}", self.kappa));
        }
        for (name, v) in [("c", self.c), ("nu", self.nu), ("train_fraction", self.train_fraction)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(self.lambda >= 0.0) || !(self.theta > 0.0) {
            return bad("lambda must be nonnegative and theta positive".into());
        }
        if self.rmse_every == 0 {
            return bad("rmse_every must be positive".into());
        }
        if let Some([p, q]) = self.repeats {
            if p == 0 || q == 0 {
                return bad("repeat counts must be positive".into());
            }
        }
        if self.budget.max_iters.is_none() && self.budget.seconds.is_none() {
            return bad("budget needs max_iters or seconds".into());
        }
        if let Some(s) = self.budget.seconds {
            if !(s > 0.0) {
                return bad("budget seconds must be positive".into());
            }
        }
        match (&self.data, self.app) {
            (DataSource::Synthesize { density: Some(d), .. }, App::Mcp) if !(*d > 0.0 && *d <= 1.0) => {
                bad(format!("density must lie in (0, 1], got {d}"))
            }
            (DataSource::Synthesize { density: None, .. }, App::Mcp) => bad("synthetic completion data needs a density".into()),
            (DataSource::File { format, .. }, App::Nmf) if !matches!(format, DataFormat::Csv | DataFormat::MatrixMarket) => {
                bad("NMF data must be a dense csv or matrix_market file".into())
            }
            (DataSource::File { format: DataFormat::Csv, .. }, App::Mcp) => bad("rating data cannot be csv".into()),
            _ => Ok(()),
        }
    }

    pub fn solver_options(&self, seed: u64) -> SolverOptions {
        SolverOptions {
            max_iters: self.budget.max_iters.unwrap_or(usize::MAX),
            time_budget_seconds: self.budget.seconds,
            stop_tolerance: self.stop_tolerance,
            restart: self.restart,
            monitor: self.monitor,
            seed,
        }
    }
}

/// Outcome of one (variant, seed) run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub variant: Algorithm,
    pub seed: u64,
    pub log: RunLog,
    pub final_objective: f64,
    /// Relative error (NMF) or test RMSE (matrix completion).
    pub final_metric: f64,
}

impl RunOutcome {
    pub fn iterations(&self) -> usize {
        self.log.records.len()
    }

    pub fn time_s(&self) -> f64 {
        self.log.records.last().map_or(0.0, |r| r.elapsed_s)
    }
}

/// Loaded data, shared by every seed.
pub enum Dataset {
    Dense(ndarray::Array2<f64>),
    Ratings(crate::block::ObservationMask<f64>),
    Synthetic,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Synthesize { .. } => Ok(Dataset::Synthetic),
        DataSource::File { path, format } => match format {
            DataFormat::Csv | DataFormat::MatrixMarket if cfg.app == App::Nmf => Ok(Dataset::Dense(load_dense_matrix(path)?)),
            DataFormat::MatrixMarket => Ok(Dataset::Ratings(load_ratings(path, RatingsFormat::MatrixMarket)?.mask)),
            DataFormat::DoubleColon => Ok(Dataset::Ratings(load_ratings(path, RatingsFormat::DoubleColon)?.mask)),
            DataFormat::Tsv => Ok(Dataset::Ratings(load_ratings(path, RatingsFormat::Tsv)?.mask)),
            DataFormat::Csv => Err(Error::Config("rating data cannot be csv".into())),
        },
    }
}

fn nmf_instance(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<SparseNmfInstance<f64>> {
    let m = match (data, &cfg.data) {
        (Dataset::Dense(m), _) => m.clone(),
        (
            Dataset::Synthetic,
            DataSource::Synthesize {
                rows,
                cols,
                rank,
                noise,
                sparsity,
                seed: data_seed,
                ..
            },
        ) => {
            let spec = NmfSynthSpec {
                rows: *rows,
                cols: *cols,
                rank: *rank,
                sparsity: *sparsity,
                noise: *noise,
            };
            synthesize_nmf::<f64>(&spec, data_seed.unwrap_or(seed))?.0.m
        }
        _ => return Err(Error::Config("NMF needs a dense matrix".into())),
    };
    let mut inst = SparseNmfInstance::new(m, cfg.rank)?;
    if let Some(s) = cfg.sparsity {
        inst = inst.with_sparsity(s)?;
    }
    inst.kappa = cfg.kappa;
    inst.c = cfg.c;
    inst.nu = cfg.nu;
    inst.validate()?;
    Ok(inst)
}

fn mcp_instance(cfg: &ExperimentConfig, data: &Dataset, seed: u64, variant: McpVariant) -> Result<McpInstance<f64>> {
    let mut inst = match (data, &cfg.data) {
        (Dataset::Ratings(mask), _) => {
            let (train, test) = split_train_test(mask, cfg.train_fraction, seed)?;
            McpInstance::new(train, test, cfg.rank)?
        }
        (
            Dataset::Synthetic,
            DataSource::Synthesize {
                rows,
                cols,
                rank,
                noise,
                density,
                seed: data_seed,
                ..
            },
        ) => {
            let spec = McpSynthSpec {
                rows: *rows,
                cols: *cols,
                rank: *rank,
                noise: *noise,
                density: density.unwrap_or(1.0),
                train_fraction: cfg.train_fraction,
            };
            let mut inst = synthesize_mcp::<f64>(&spec, data_seed.unwrap_or(seed))?;
            inst.r = cfg.rank;
            inst
        }
        _ => return Err(Error::Config("matrix completion needs rating data".into())),
    };
    inst.lambda = cfg.lambda;
    inst.theta = cfg.theta;
    inst.variant = variant;
    inst.validate()?;
    Ok(inst)
}

pub fn run_one(cfg: &ExperimentConfig, data: &Dataset, variant: Algorithm, seed: u64) -> Result<RunOutcome> {
    let solver = cfg.solver_options(seed);
    match cfg.app {
        App::Nmf => {
            let inst = nmf_instance(cfg, data, seed)?;
            let nmf_variant = match variant {
                Algorithm::Titan => NmfVariant::Titan,
                Algorithm::Palm => NmfVariant::Palm,
                other => return Err(Error::Config(format!("variant {} does not apply to NMF", other.name()))),
            };
            let opts = NmfRunOptions {
                variant: nmf_variant,
                repeats: cfg.repeats.map(|[p, q]| (p, q)),
                solver,
                extrapolation: None,
            };
            let res = sparse_nmf_run(&inst, &opts, seed)?;
            let final_metric = res.log.records.last().and_then(|r| r.metric).or(res.log.initial_metric).unwrap_or(f64::NAN);
            Ok(RunOutcome {
                variant,
                seed,
                final_objective: res.log.final_objective(),
                final_metric,
                log: res.log,
            })
        }
        App::Mcp => {
            let mcp_variant = match variant {
                Algorithm::TitanExtra => McpVariant::TitanExtra,
                Algorithm::TitanNo => McpVariant::TitanNo,
                Algorithm::Palm => McpVariant::Palm,
                other => return Err(Error::Config(format!("variant {} does not apply to matrix completion", other.name()))),
            };
            let inst = mcp_instance(cfg, data, seed, mcp_variant)?;
            let opts = McpRunOptions {
                solver,
                rmse_every: cfg.rmse_every,
                extrapolation: None,
            };
            let res = mcp_run(&inst, &opts, seed)?;
            let final_metric = rmse(&inst.test, res.u.view(), res.v.view())?;
            Ok(RunOutcome {
                variant,
                seed,
                final_objective: res.log.final_objective(),
                final_metric,
                log: res.log,
            })
        }
    }
}

/// Number of bench workers: `TITAN_THREADS` if set, else the available parallelism.
pub fn worker_count() -> Result<usize> {
    match std::env::var("TITAN_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("TITAN_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs every (variant, seed) pair on a pool of `threads` workers. Results
/// come back in (variant, seed) order.
pub fn run_all(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let jobs: Vec<(Algorithm, u64)> = cfg
        .variants
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(|&(v, s)| run_one(cfg, &data, v, s)).collect())
}

pub fn metric_name(app: App) -> &'static str {
    match app {
        App::Nmf => "rel_error",
        App::Mcp => "rmse",
    }
}

fn stop_name(r: StopReason) -> &'static str {
    match r {
        StopReason::MaxIters => "max_iters",
        StopReason::TimeBudget => "time_budget",
        StopReason::Tolerance => "tolerance",
    }
}

pub const SEEDS_HEADER: &str = "variant,seed,final_objective,final_metric,iterations,time_s,restarts,stop_reason";
pub const SUMMARY_HEADER: &str =
    "variant,n,objective_mean,objective_std,metric_mean,metric_std,iterations_mean,time_s_mean";

/// Mean and sample standard deviation (`n − 1` denominator; zero for `n = 1`).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub variant: Algorithm,
    pub n: usize,
    pub objective: (f64, f64),
    pub metric: (f64, f64),
    pub iterations_mean: f64,
    pub time_mean: f64,
}

pub fn summarize(cfg: &ExperimentConfig, outcomes: &[RunOutcome]) -> Vec<SummaryRow> {
    cfg.variants
        .iter()
        .map(|&v| {
            let runs: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.variant == v).collect();
            let col = |f: &dyn Fn(&RunOutcome) -> f64| runs.iter().map(|o| f(o)).collect::<Vec<f64>>();
            SummaryRow {
                variant: v,
                n: runs.len(),
                objective: mean_std(&col(&|o| o.final_objective)),
                metric: mean_std(&col(&|o| o.final_metric)),
                iterations_mean: mean_std(&col(&|o| o.iterations() as f64)).0,
                time_mean: mean_std(&col(&|o| o.time_s())).0,
            }
        })
        .collect()
}

pub fn seed_file_name(app: App, variant: Algorithm, seed: u64) -> String {
    format!("{}-{}-seed{seed}.csv", app_name(app), variant.name())
}

fn app_name(app: App) -> &'static str {
    match app {
        App::Nmf => "nmf",
        App::Mcp => "mcp",
    }
}

/// Writes one metrics CSV per run, `seeds.csv` and `summary.csv` into the
/// output directory and returns the summary rows.
pub fn write_outputs(cfg: &ExperimentConfig, outcomes: &[RunOutcome]) -> Result<Vec<SummaryRow>> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut seeds = String::from(SEEDS_HEADER);
    seeds.push('\n');
    for o in outcomes {
        write_metrics(&o.log, dir.join(seed_file_name(cfg.app, o.variant, o.seed)))?;
        seeds.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            o.variant.name(),
            o.seed,
            format_g17(o.final_objective),
            format_g17(o.final_metric),
            o.iterations(),
            format_g17(o.time_s()),
            o.log.restarts(),
            stop_name(o.log.stop_reason),
        ));
    }
    let path = dir.join("seeds.csv");
    fs::write(&path, seeds).map_err(|e| Error::io(&path, e))?;
    let rows = summarize(cfg, outcomes);
    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');
    for r in &rows {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.variant.name(),
            r.n,
            format_g17(r.objective.0),
            format_g17(r.objective.1),
            format_g17(r.metric.0),
            format_g17(r.metric.1),
            format_g17(r.iterations_mean),
            format_g17(r.time_mean),
        ));
    }
    let path = dir.join("summary.csv");
    fs::write(&path, summary).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

/// `mean ± std` table in the layout of the experiment tables.
pub fn render_table(cfg: &ExperimentConfig, rows: &[SummaryRow]) -> String {
    let metric = metric_name(cfg.app);
    let mut out = format!("{:<12} {:>4}  {:>30}  {:>30}\n", "method", "n", "objective", metric);
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:>4}  {:>30}  {:>30}\n",
            r.variant.name(),
            r.n,
            format!("{:.6e} ± {:.4e}", r.objective.0, r.objective.1),
            format!("{:.6e} ± {:.4e}", r.metric.0, r.metric.1),
        ));
    }
    out
}

pub const PRESET_NMF_DESK: &str = include_str!("../presets/nmf-desk.json");
pub const PRESET_MCP_DESK: &str = include_str!("../presets/mcp-desk.json");
pub const PRESET_MOVIELENS_1M: &str = include_str!("../presets/movielens1m.json");
pub const PRESET_CBCL: &str = include_str!("../presets/cbcl.json");

/// `(file name, contents)` of every shipped preset.
pub const PRESETS: [(&str, &str); 4] = [
    ("nmf-desk.json", PRESET_NMF_DESK),
    ("mcp-desk.json", PRESET_MCP_DESK),
    ("movielens1m.json", PRESET_MOVIELENS_1M),
    ("cbcl.json", PRESET_CBCL),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_round_trip() {
        for (name, text) in PRESETS {
            let cfg = ExperimentConfig::from_json(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            let again: serde_json::Value = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
            let original: serde_json::Value = serde_json::from_str(text).unwrap();
            assert_eq!(again, original, "{name}");
        }
    }

    #[test]
    fn mean_std_uses_sample_variance() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ExperimentConfig::from_json(PRESET_MCP_DESK).unwrap();
        cfg.seeds.clear();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::from_json(PRESET_NMF_DESK).unwrap();
        cfg.variants = vec![Algorithm::TitanExtra];
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_json("{\"app\": \"nmf\", \"bogus\": 1}").is_err());
    }
}
