use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use infsel::dataio::{SyntheticKind, TaskKind};
use infsel::evaluators::EnsembleMode;

#[derive(Debug, Parser)]
#[command(name = "infsel", version, about = "Influence-guided training subset selection experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Greedy influence selection against random selection, tracking validation loss.
    Compare(CompareArgs),
    /// Select with the linear kernel, then score tree ensembles on the selected subsets.
    Transfer(TransferArgs),
    /// Paired Hyperband runs with random and influence-based subsampling.
    Tune(TuneArgs),
    /// Run the numerical property suites and report pass/fail per property.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Numeric CSV file with a header row.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub data: Option<PathBuf>,
    /// Target column, by header name or 0-based index.
    #[arg(long, requires = "data")]
    pub target_col: Option<String>,
    /// Task of the CSV target.
    #[arg(long, default_value = "regression", value_parser = parse_task)]
    pub task: TaskKind,
    /// The CSV has no header row.
    #[arg(long)]
    pub no_header: bool,
    /// Synthetic generator; a fresh dataset is drawn for every run seed.
    #[arg(long, value_parser = parse_synthetic)]
    pub synthetic: Option<SyntheticKind>,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub d: usize,
    /// Skip feature standardization.
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Number of run seeds; seeds are `seed .. seed + seeds`.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// First run seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SelectionArgs {
    /// Selection steps.
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    /// Points added per step.
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    /// Probability of a uniformly random batch instead of the greedy one.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    /// L2 regularization strength of the loss kernel.
    #[arg(long, default_value_t = infsel::losskernels::DEFAULT_LAMBDA)]
    pub lambda: f64,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluatorArgs {
    #[arg(long, default_value = "random_forest", value_parser = parse_mode)]
    pub evaluator: EnsembleMode,
    #[arg(long, default_value_t = 10)]
    pub n_trees: usize,
    #[arg(long, default_value_t = 6)]
    pub max_depth: usize,
    /// Shrinkage for gradient boosting.
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TransferArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[command(flatten)]
    pub evaluator: EvaluatorArgs,
    /// Score the tree ensemble every this many steps.
    #[arg(long, default_value_t = 10)]
    pub eval_every: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Hyperband iterations per seed.
    #[arg(long, default_value_t = 8)]
    pub iters: usize,
    /// Points added per greedy step when growing influence subsets.
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    /// Random-batch probability of the influence subsampler.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = infsel::losskernels::DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Halving rates, cycled across Hyperband iterations.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
    pub eta_cycle: Vec<usize>,
    /// Largest subset size (defaults to the training-set size).
    #[arg(long)]
    pub max_resource: Option<usize>,
    /// Smallest subset size (defaults to max(d, 10)).
    #[arg(long)]
    pub min_resource: Option<usize>,
    /// Challenger arm compared against random subsampling.
    #[arg(long, default_value = "influence", value_parser = ["influence", "random"])]
    pub subsampler: String,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Run only these properties (comma separated or repeated).
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<String>,
    /// Fewer instances per property.
    #[arg(long)]
    pub quick: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse().map_err(|e: infsel::Error| e.to_string())
}

fn parse_synthetic(s: &str) -> Result<SyntheticKind, String> {
    s.parse().map_err(|e: infsel::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<EnsembleMode, String> {
    s.parse().map_err(|e: infsel::Error| e.to_string())
}
