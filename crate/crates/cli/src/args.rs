use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "reachavoid", version, about = "Discounted reach-avoid game solver")]
pub struct Cli {
    /// Cap on worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabular value iteration; writes field.csv and report.toml.
    Solve(SolveArgs),
    /// Neural Q-learning; writes checkpoint.json, train_log.csv and learned_field.csv.
    Train(TrainArgs),
    /// One closed-loop rollout from a given state.
    Rollout(RolloutArgs),
    /// Worst-case success rate from sampled states above a margin.
    Eval(EvalArgs),
    /// IoU, volume ratio and max gap between two fields.
    Compare(CompareArgs),
    /// PGM heatmap and membership mask of a 2D slice.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// Built-in problem: di2d, carts6d, carts6d-viability, carts6d-brs.
    #[arg(long, conflicts_with = "config")]
    pub benchmark: Option<String>,

    /// TOML problem/run file.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub gamma: Option<f64>,

    /// `lo,hi,count` for one axis; repeat per axis, or give once for all.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,

    #[arg(long)]
    pub lambda: Option<f64>,

    #[arg(long)]
    pub tol: Option<f64>,

    #[arg(long)]
    pub max_iters: Option<usize>,

    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,

    #[arg(long)]
    pub lambda: Option<f64>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub alpha: Option<f64>,

    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValueArgs {
    /// Field CSV written by `solve`.
    #[arg(long, conflicts_with = "checkpoint")]
    pub field: Option<PathBuf>,

    /// Network checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Disturbance {
    WorstCase,
    None,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,

    #[command(flatten)]
    pub value: ValueArgs,

    /// Initial state, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,

    #[arg(long, default_value_t = 1000)]
    pub horizon: usize,

    #[arg(long, value_enum, default_value_t = Disturbance::WorstCase)]
    pub disturbance: Disturbance,

    /// Fixed disturbance indices, cycled; overrides --disturbance.
    #[arg(long, value_delimiter = ',')]
    pub disturbance_seq: Option<Vec<usize>>,

    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,

    #[command(flatten)]
    pub value: ValueArgs,

    #[arg(long, default_value_t = 500)]
    pub samples: usize,

    #[arg(long, default_value_t = reachavoid::policy::DEFAULT_MARGIN)]
    pub margin: f64,

    #[arg(long, default_value_t = 1000)]
    pub horizon: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,

    /// Also write compare.toml here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub field: PathBuf,

    /// Fixed coordinates `axis=value,...`; must leave exactly two free axes.
    #[arg(long, allow_hyphen_values = true)]
    pub slice: Option<String>,

    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}
