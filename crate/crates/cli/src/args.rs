use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mtl_core::{GroupWeighting, Hyperparams, InitMode, LatentK, SStepSolver};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "mtl",
    version,
    about = "Grouped latent multi-task attribute classifiers"
)]
pub struct Cli {
    /// Log level for standard error (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Train a latent model and write it with a JSON-lines report.
    Train(TrainArgs),
    /// Score a feature file with a trained model.
    Predict(PredictArgs),
    /// Per-group accuracy or mAP table for a model on labelled data.
    Eval(EvalArgs),
    /// Train a comparison model (lasso, l21 or ridge).
    Baseline(BaselineArgs),
    /// Write a synthetic group-structured problem to disk.
    Synth(SynthArgs),
    /// Cross-validate penalty weights.
    Cv(CvArgs),
}

/// Labelled data: repeated `--features`/`--labels` pairs, or a directory
/// of `<name>.mtlf` files each with a `<name>.csv` label table.
#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Feature file (MTLF binary, or CSV by extension). Repeatable.
    #[arg(long = "features", value_name = "PATH")]
    pub features: Vec<PathBuf>,
    /// Label table for the preceding feature file. Repeatable.
    #[arg(long = "labels", value_name = "PATH")]
    pub labels: Vec<PathBuf>,
    /// Directory of feature/label file pairs.
    #[arg(long, value_name = "DIR", conflicts_with_all = ["features", "labels"])]
    pub data_dir: Option<PathBuf>,
    /// Read label 0 as -1.
    #[arg(long)]
    pub zero_one: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Weighting {
    Unweighted,
    SqrtSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Solver {
    Smoothed,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Init {
    Random,
    Diagnostic,
}

#[derive(Debug, Args, Serialize)]
pub struct HyperArgs {
    /// Group penalty weight.
    #[arg(long, default_value_t = 0.1)]
    pub mu: f64,
    /// L1 weight on the latent matrix.
    #[arg(long, default_value_t = 0.01)]
    pub gamma: f64,
    /// Squared Frobenius weight on the latent matrix.
    #[arg(long, default_value_t = 0.4)]
    pub lambda: f64,
    /// Latent dimension: an integer, `d/2`, or `auto`.
    #[arg(long, default_value = "auto", value_parser = parse_latent_k)]
    #[serde(serialize_with = "ser_latent_k")]
    pub latent_k: LatentK,
    /// Smoothing scale of the group penalty (default: matched to --inner-tol).
    #[arg(long)]
    pub nu: Option<f64>,
    /// Multiply the smoothing scale by this after each outer iteration.
    #[arg(long)]
    pub nu_decay: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub outer_max: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub outer_tol: f64,
    #[arg(long, default_value_t = 500)]
    pub inner_max: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub inner_tol: f64,
    /// Penalise the squared group norm.
    #[arg(long)]
    pub squared_penalty: bool,
    #[arg(long, value_enum, default_value_t = Weighting::Unweighted)]
    pub weighting: Weighting,
    #[arg(long, value_enum, default_value_t = Solver::Smoothed)]
    pub s_solver: Solver,
    /// Skip the final exact step that zeroes inactive blocks.
    #[arg(long)]
    pub no_polish: bool,
    /// Ridge strength of the warm start.
    #[arg(long, default_value_t = 1.0)]
    pub ridge_lambda: f64,
    #[arg(long, value_enum, default_value_t = Init::Random)]
    pub init: Init,
    #[arg(long, default_value_t = 1e-2)]
    pub init_scale: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

pub fn parse_latent_k(s: &str) -> Result<LatentK, String> {
    match s.trim() {
        "auto" => Ok(LatentK::Auto),
        "d/2" | "D/2" => Ok(LatentK::HalfD),
        other => match other.parse::<usize>() {
            Ok(0) => Err("latent dimension must be >= 1".into()),
            Ok(k) => Ok(LatentK::Fixed(k)),
            Err(_) => Err(format!(
                "expected an integer, `d/2` or `auto`, got '{other}'"
            )),
        },
    }
}

fn ser_latent_k<S: serde::Serializer>(k: &LatentK, s: S) -> Result<S::Ok, S::Error> {
    match k {
        LatentK::Auto => s.serialize_str("auto"),
        LatentK::HalfD => s.serialize_str("d/2"),
        LatentK::Fixed(k) => s.serialize_u64(*k as u64),
    }
}

impl HyperArgs {
    pub fn to_hyperparams(&self) -> Hyperparams {
        Hyperparams {
            mu: self.mu,
            gamma: self.gamma,
            lambda: self.lambda,
            latent_k: self.latent_k,
            nu: self.nu,
            nu_decay: self.nu_decay,
            outer_max: self.outer_max,
            outer_tol: self.outer_tol,
            inner_max: self.inner_max,
            inner_tol: self.inner_tol,
            squared_penalty: self.squared_penalty,
            group_weighting: match self.weighting {
                Weighting::Unweighted => GroupWeighting::Unweighted,
                Weighting::SqrtSize => GroupWeighting::SqrtSize,
            },
            s_solver: match self.s_solver {
                Solver::Smoothed => SStepSolver::Smoothed,
                Solver::Exact => SStepSolver::ExactProx,
            },
            polish: !self.no_polish,
            ridge_lambda: self.ridge_lambda,
            init_mode: match self.init {
                Init::Random => InitMode::Random,
                Init::Diagnostic => InitMode::Diagnostic,
            },
            init_scale: self.init_scale,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Group file (`Name: attr, attr, ...` per line).
    #[arg(long, value_name = "PATH")]
    pub groups: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Model output path.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// JSON-lines report path (default: standard output).
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub features: PathBuf,
    /// Emit predicted ±1 labels instead of raw scores.
    #[arg(long)]
    pub labels_only: bool,
    /// Output CSV path (default: standard output).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum MetricArg {
    Acc,
    Map,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long, value_enum, default_value_t = MetricArg::Acc)]
    pub metric: MetricArg,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Report output path (default: standard output).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "PATH")]
    pub groups: PathBuf,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum BaselineKind {
    Lasso,
    L21,
    Ridge,
}

#[derive(Debug, Args, Serialize)]
pub struct BaselineArgs {
    #[arg(value_enum)]
    pub kind: BaselineKind,
    #[command(flatten)]
    pub data: DataArgs,
    /// L1 weight (lasso).
    #[arg(long, default_value_t = 0.01)]
    pub gamma: f64,
    /// Row-sharing weight (l21).
    #[arg(long, default_value_t = 0.1)]
    pub mu: f64,
    /// Ridge strength (ridge).
    #[arg(long, default_value_t = 1.0)]
    pub ridge_lambda: f64,
    #[arg(long, default_value_t = 500)]
    pub inner_max: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub inner_tol: f64,
    /// Model output path.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub d: usize,
    #[arg(long, default_value_t = 12)]
    pub m: usize,
    /// Number of groups; tasks are dealt round-robin.
    #[arg(long, default_value_t = 3)]
    pub groups: usize,
    /// True latent dimension (default: number of tasks).
    #[arg(long)]
    pub k_true: Option<usize>,
    #[arg(long, default_value_t = 200)]
    pub n_per_task: usize,
    /// Per-task training counts overriding --n-per-task, as `task:count,...`.
    #[arg(long, value_name = "LIST")]
    pub undersample: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub n_test: usize,
    /// Fraction of nonzero entries in the true latent matrix.
    #[arg(long, default_value_t = 1.0)]
    pub density: f64,
    /// Training label flip probability.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Median unsigned margin of the true classifiers.
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

pub fn parse_undersample(s: &str) -> Result<Vec<(usize, usize)>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let (t, n) = pair
                .split_once(':')
                .ok_or_else(|| format!("expected task:count, got '{pair}'"))?;
            let t = t
                .trim()
                .parse()
                .map_err(|_| format!("bad task index '{t}'"))?;
            let n = n.trim().parse().map_err(|_| format!("bad count '{n}'"))?;
            Ok((t, n))
        })
        .collect()
}

#[derive(Debug, Args, Serialize)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "PATH")]
    pub groups: Option<PathBuf>,
    /// Comma-separated group penalty weights.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,1")]
    pub mu_grid: Vec<f64>,
    /// Comma-separated L1 weights.
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1")]
    pub gamma_grid: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    /// Worker threads for fold evaluations.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Cross-validate the per-task lasso over --gamma-grid instead.
    #[arg(long)]
    pub lasso: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
}
