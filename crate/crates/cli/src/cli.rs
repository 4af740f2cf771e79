use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Parser, Debug)]
#[command(
    name = "batchstate",
    version,
    about = "Batch state and parameter estimation"
)]
pub struct Cli {
    /// JSON file with per-command defaults. Flags take precedence.
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a linear model and write its states and measurements.
    Simulate(SimulateArgs),
    /// Estimate a trajectory from a measurement CSV.
    Estimate(EstimateArgs),
    /// Run one of the reference experiments.
    #[command(subcommand)]
    Experiment(Experiment),
}

#[derive(Args, Debug)]
pub struct ModelSource {
    /// Model JSON with keys A, C and n.
    #[arg(long, value_name = "JSON", conflicts_with = "example2")]
    pub model: Option<PathBuf>,

    /// Use the built-in ten-state comparison model.
    #[arg(long)]
    pub example2: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: ModelSource,

    /// Initial state, comma separated [default: all ones].
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x1: Option<Vec<f64>>,

    /// Process noise standard deviation [default: 0].
    #[arg(long, allow_negative_numbers = true)]
    pub sigma_nu: Option<f64>,

    /// Measurement noise standard deviation [default: 0].
    #[arg(long, allow_negative_numbers = true)]
    pub sigma_mu: Option<f64>,

    /// Horizon [default: 50].
    #[arg(long = "N", value_name = "N")]
    pub horizon: Option<usize>,

    /// Noise seed [default: $BATCHSTATE_SEED or 0].
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output prefix; writes <prefix>_x.csv and <prefix>_y.csv.
    #[arg(long, value_name = "PREFIX")]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Batch,
    Db,
    Sdb,
}

impl MethodArg {
    pub fn label(self) -> &'static str {
        match self {
            MethodArg::Batch => "batch",
            MethodArg::Db => "db",
            MethodArg::Sdb => "sdb",
        }
    }
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Estimator [default: batch].
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,

    /// Measurement weight; also weights the reported loss [default: 1].
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,

    #[command(flatten)]
    pub source: ModelSource,

    /// Measurement CSV (t,y).
    #[arg(long, value_name = "CSV")]
    pub y: Option<PathBuf>,

    /// True trajectory CSV; adds the relative error to the report.
    #[arg(long, value_name = "CSV")]
    pub truth: Option<PathBuf>,

    /// Output prefix; writes <prefix>_xhat.csv and <prefix>.json.
    #[arg(long, value_name = "PREFIX")]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Experiment {
    /// Filter matrices of the scalar random walk for several weights.
    Ex1(Ex1Args),
    /// Batch estimator against both dead-beat observers over a noise grid.
    Ex2(Ex2Args),
    /// Hénon state and coefficient recovery table.
    Ex3(Ex3Args),
}

#[derive(Args, Debug)]
pub struct Ex1Args {
    /// Weights, comma separated [default: 0.1,1,10].
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub rhos: Option<Vec<f64>>,

    /// Horizon [default: 5].
    #[arg(long = "N", value_name = "N")]
    pub horizon: Option<usize>,

    /// Output directory [default: .].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Ex2Args {
    /// Process noise levels, comma separated [default: 0,0.1,…,1].
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub sigma_nu: Option<Vec<f64>>,

    /// Horizons, comma separated [default: 10,20,…,100].
    #[arg(long, value_delimiter = ',')]
    pub grid_n: Option<Vec<usize>>,

    /// Trials per cell [default: 100].
    #[arg(long)]
    pub trials: Option<usize>,

    /// Measurement weight of the batch estimator [default: 1].
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,

    /// Master seed [default: $BATCHSTATE_SEED or 0].
    #[arg(long)]
    pub master_seed: Option<u64>,

    /// Also write one gnuplot matrix file per method.
    #[arg(long)]
    pub matrix: bool,

    /// Output directory [default: .].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Ex3Args {
    /// Measurement noise levels, comma separated [default: 0,0.1,0.2,0.5,1].
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub sigmas: Option<Vec<f64>>,

    /// Trials per noise level [default: 10].
    #[arg(long)]
    pub trials: Option<usize>,

    /// Horizon [default: 100].
    #[arg(long = "N", value_name = "N")]
    pub horizon: Option<usize>,

    /// Master seed [default: $BATCHSTATE_SEED or 0].
    #[arg(long)]
    pub master_seed: Option<u64>,

    /// Measurement weight [default: 0.1].
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,

    /// Sparsity weight [default: 0.001].
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,

    /// Initial step size [default: 0.05].
    #[arg(long, allow_negative_numbers = true)]
    pub eta: Option<f64>,

    /// Iteration budget per fit [default: 200000].
    #[arg(long)]
    pub max_iters: Option<usize>,

    /// Write a JSON fit report (coefficients and loss history) per trial.
    #[arg(long)]
    pub save_fits: bool,

    /// Output directory [default: .].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}
