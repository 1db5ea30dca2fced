//! Command-line definitions. Every option is optional here so that values can
//! fall back to the `--config` file and then to built-in defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "gaware", version, about = "Generalizability-aware trees with a basin of ignorance")]
pub struct Cli {
    /// JSON file whose keys mirror flag names; flags take precedence.
    #[arg(long, global = true, env = "GAWARE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Maximum worker threads.
    #[arg(long, global = true, env = "GAWARE_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an estimate table from a raw study CSV.
    BuildEstimates(BuildArgs),
    /// Fit one tree at a fixed ignorance cost.
    Fit(FitArgs),
    /// Fit over a grid of ignorance costs and tabulate the frontier.
    Sweep(SweepArgs),
    /// Test candidate trees on split samples.
    Infer(InferArgs),
    /// Fit a bagged forest and score every type.
    Forest(ForestArgs),
    /// Run the simulation benchmark.
    Simulate(SimulateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::BuildEstimates(_) => "build-estimates",
            Command::Fit(_) => "fit",
            Command::Sweep(_) => "sweep",
            Command::Infer(_) => "infer",
            Command::Forest(_) => "forest",
            Command::Simulate(_) => "simulate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Ipw,
    Dr,
    Match,
    Param,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyKind {
    Env,
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceKind {
    PerType,
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Equal,
    Quantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CenteringKind {
    Global,
    PerGroup,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Raw study CSV.
    #[arg(long, env = "GAWARE_INPUT")]
    pub input: Option<PathBuf>,
    /// Output estimate table; with `--split`, `<out>.main.csv` and `<out>.holdout.csv`.
    #[arg(long, env = "GAWARE_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, env = "GAWARE_ESTIMATOR")]
    pub estimator: Option<EstimatorKind>,
    /// Cross-fitting folds for the outcome regressions.
    #[arg(long, env = "GAWARE_FOLDS")]
    pub folds: Option<usize>,
    /// Units per matched group.
    #[arg(long, env = "GAWARE_MATCH_SIZE")]
    pub match_size: Option<usize>,
    #[arg(long, env = "GAWARE_SEED")]
    pub seed: Option<u64>,
    /// Emit two independent halves for inference.
    #[arg(long, env = "GAWARE_SPLIT")]
    pub split: bool,
    /// How units are grouped into types.
    #[arg(long, value_enum, env = "GAWARE_KEY")]
    pub key: Option<KeyKind>,
    /// Variance estimator for the IPW and doubly robust builders.
    #[arg(long, value_enum, env = "GAWARE_VARIANCE")]
    pub variance: Option<VarianceKind>,
    /// Smooth per-unit variances with the regression oracle (`param` only).
    #[arg(long, env = "GAWARE_MODEL_VARIANCE")]
    pub model_variance: bool,
}

#[derive(Debug, Args, Clone)]
pub struct SearchArgs {
    /// Ignorance cost per unit of weight.
    #[arg(long, env = "GAWARE_SIGMA2")]
    pub sigma2: Option<f64>,
    /// Tree depth.
    #[arg(long, env = "GAWARE_DEPTH")]
    pub depth: Option<usize>,
    /// Candidate thresholds per variable and node.
    #[arg(long, env = "GAWARE_SPLITS")]
    pub splits: Option<usize>,
    /// Leaves with at most this many types can only abstain.
    #[arg(long, env = "GAWARE_MIN_LEAF")]
    pub min_leaf: Option<usize>,
    /// Number of labels including the basin.
    #[arg(long, env = "GAWARE_GROUPS")]
    pub groups: Option<usize>,
    #[arg(long, value_enum, env = "GAWARE_SPLIT_RULE")]
    pub split_rule: Option<RuleKind>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Estimate table CSV.
    #[arg(long, env = "GAWARE_INPUT")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Tree JSON output.
    #[arg(long, env = "GAWARE_OUT")]
    pub out: Option<PathBuf>,
    /// Per-type CSV report.
    #[arg(long, env = "GAWARE_REPORT")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, env = "GAWARE_INPUT")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchArgs,
    /// `start:stop:step` or a comma-separated list, ascending.
    #[arg(long, env = "GAWARE_SIGMA2_GRID")]
    pub sigma2_grid: Option<String>,
    /// Frontier CSV output.
    #[arg(long, env = "GAWARE_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Estimate table of the main half.
    #[arg(long, env = "GAWARE_MAIN")]
    pub main: Option<PathBuf>,
    /// Estimate table of the holdout half.
    #[arg(long, env = "GAWARE_HOLDOUT")]
    pub holdout: Option<PathBuf>,
    /// A tree JSON file or a directory of them.
    #[arg(long, env = "GAWARE_CANDIDATES")]
    pub candidates: Option<PathBuf>,
    /// Family-wise level.
    #[arg(long, env = "GAWARE_GAMMA")]
    pub gamma: Option<f64>,
    #[arg(long, value_enum, env = "GAWARE_CENTERING")]
    pub centering: Option<CenteringKind>,
    /// Settings of the holdout fit.
    #[command(flatten)]
    pub search: SearchArgs,
    /// Test report CSV output.
    #[arg(long, env = "GAWARE_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ForestArgs {
    #[arg(long, env = "GAWARE_INPUT")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Number of trees.
    #[arg(long, env = "GAWARE_TREES")]
    pub trees: Option<usize>,
    /// Variables drawn per tree.
    #[arg(long, env = "GAWARE_VARS")]
    pub vars: Option<usize>,
    #[arg(long, env = "GAWARE_SEED")]
    pub seed: Option<u64>,
    /// Fit every tree on the full table.
    #[arg(long, env = "GAWARE_NO_BOOTSTRAP")]
    pub no_bootstrap: bool,
    /// Score each type only with trees that left it out of their resample.
    #[arg(long, env = "GAWARE_OOB")]
    pub oob: bool,
    /// Forest JSON output.
    #[arg(long, env = "GAWARE_OUT")]
    pub out: Option<PathBuf>,
    /// Per-type score CSV output.
    #[arg(long, env = "GAWARE_SCORES")]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Comma-separated Cauchy scales.
    #[arg(long, env = "GAWARE_SCALES")]
    pub scales: Option<String>,
    /// Comma-separated ignorance costs for the G-Aware runs.
    #[arg(long, env = "GAWARE_SIGMA2_GRID")]
    pub sigma2_grid: Option<String>,
    #[arg(long, env = "GAWARE_REPS")]
    pub reps: Option<usize>,
    /// Number of types.
    #[arg(long, env = "GAWARE_N")]
    pub n: Option<usize>,
    #[arg(long, env = "GAWARE_UNITS_PER_TYPE")]
    pub units_per_type: Option<usize>,
    #[arg(long, env = "GAWARE_SEED")]
    pub seed: Option<u64>,
    /// Tree depth of every fitted tree.
    #[arg(long, env = "GAWARE_DEPTH")]
    pub depth: Option<usize>,
    #[arg(long, env = "GAWARE_SPLITS")]
    pub splits: Option<usize>,
    #[arg(long, env = "GAWARE_MIN_LEAF")]
    pub min_leaf: Option<usize>,
    #[arg(long, env = "GAWARE_GROUPS")]
    pub groups: Option<usize>,
    /// Per-replication CSV output.
    #[arg(long, env = "GAWARE_OUT")]
    pub out: Option<PathBuf>,
    /// Median summary JSON output.
    #[arg(long, env = "GAWARE_SUMMARY")]
    pub summary: Option<PathBuf>,
    /// Also write the first replication's raw study at the first scale.
    #[arg(long, env = "GAWARE_STUDY_OUT")]
    pub study_out: Option<PathBuf>,
}
