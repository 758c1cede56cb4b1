//! Command-line data generation, training, planning and evaluation.
//!
//! Exit codes: 0 success, 1 planning failure, 2 configuration or input error, 3 output I/O error.

mod error;
mod eval;
mod gen_data;
mod plan;
pub mod svg;
mod train;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::CliError;
pub use eval::{aggregate, Aggregate, EvalRow, PlannerSummary, EVAL_CSV_VERSION};
pub use train::TRAIN_CSV_VERSION;

#[derive(Debug, Parser)]
#[command(name = "vqmpt", version, about = "Learned sampling regions for a 2D point robot")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a Stage-1 trajectory dataset or a Stage-2 demonstration dataset.
    GenData(GenDataArgs),
    /// Train Stage 1 (autoencoder and codebook) or Stage 2 (index predictor).
    Train(TrainArgs),
    /// Plan one query and write the path, a JSON record, an SVG and the costmap.
    Plan(PlanArgs),
    /// Run planners over a problem set and write per-row CSV, aggregate JSON and an SVG.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlannerName {
    Vqmpt,
    Rrt,
    RrtStar,
}

impl PlannerName {
    pub fn as_str(self) -> &'static str {
        match self {
            PlannerName::Vqmpt => "vqmpt",
            PlannerName::Rrt => "rrt",
            PlannerName::RrtStar => "rrt-star",
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// Trajectories for stage 1, environments for stage 2.
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub trajs_per_env: usize,
    #[arg(long, default_value_t = 20_000)]
    pub rrt_star_iterations: usize,
    /// Per-demo wall-clock budget; 0 disables it for bit-reproducible output.
    #[arg(long, default_value_t = 5.0)]
    pub rrt_star_seconds: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Stage-1 checkpoint; required for stage 2.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// CSV loss log; defaults to `<out>.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub held_out_fraction: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 400)]
    pub warmup_steps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lr_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub clip_norm: f64,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    /// Codebook size (stage 1).
    #[arg(long, default_value_t = 32)]
    pub codes: usize,
    #[arg(long, default_value_t = 8)]
    pub d_factor: usize,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    #[arg(long, default_value_t = 0.25)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    /// Longest predicted index sequence, goal included (stage 2).
    #[arg(long, default_value_t = 12)]
    pub max_len: usize,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub world_seed: u64,
    /// Plan in an obstacle-free world instead of a generated one.
    #[arg(long)]
    pub empty: bool,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub start: [f64; 2],
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub goal: [f64; 2],
    #[arg(long, value_enum, default_value_t = PlannerName::Vqmpt)]
    pub planner: PlannerName,
    #[arg(long = "K", default_value_t = 500)]
    pub k: usize,
    #[arg(long, default_value_t = 0.9)]
    pub b: f64,
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
    /// Wall-clock cutoff in seconds.
    #[arg(long, default_value_t = 20.0)]
    pub cutoff: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Stage-2 dataset whose records define the problems.
    #[arg(long)]
    pub problems: PathBuf,
    /// Evaluate only the first N problems.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "vqmpt,rrt,rrt-star")]
    pub planners: Vec<PlannerName>,
    #[arg(long, default_value_t = 20.0)]
    pub cutoff: f64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long = "K", default_value_t = 500)]
    pub k: usize,
    #[arg(long, default_value_t = 0.9)]
    pub b: f64,
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Iteration cap for rrt-star; unlimited when absent (the cutoff still applies).
    #[arg(long)]
    pub rrt_star_iterations: Option<usize>,
    /// Budget of the RRT* reference used when vqmpt finds no path.
    #[arg(long, default_value_t = 300.0)]
    pub reference_seconds: f64,
    #[arg(long)]
    pub reference_iterations: Option<usize>,
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [x, y] => {
            let x: f64 = x.parse().map_err(|_| format!("bad x coordinate in {s:?}"))?;
            let y: f64 = y.parse().map_err(|_| format!("bad y coordinate in {s:?}"))?;
            if x.is_finite() && y.is_finite() {
                Ok([x, y])
            } else {
                Err(format!("non-finite point {s:?}"))
            }
        }
        _ => Err(format!("expected x,y, got {s:?}")),
    }
}

/// Result of a subcommand that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    PlanningFailed,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::PlanningFailed => 1,
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::GenData(a) => gen_data::run(&a),
        Command::Train(a) => train::run(&a),
        Command::Plan(a) => plan::run(&a),
        Command::Eval(a) => eval::run(&a),
    }
}

/// Parses `args`, runs the command and maps the result onto the exit-code contract.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(o) => o.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Rayon pool capped by `VQMPT_THREADS` when set.
pub(crate) fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("VQMPT_THREADS") {
        let n: usize = v.parse().map_err(|_| CliError::Config(format!("VQMPT_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CliError::Config("VQMPT_THREADS must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Config(e.to_string()))
}
