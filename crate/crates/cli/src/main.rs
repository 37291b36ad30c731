//! `groupdro`: generate synthetic data, train single runs, run grid
//! benchmarks and the theory checks, and print saved reports.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (",
    env!("GROUPDRO_GIT_DESCRIBE"),
    ")"
);

#[derive(Debug, Parser)]
#[command(name = "groupdro", version = VERSION, about = "Group DRO experiments on synthetic and CSV data")]
pub struct Cli {
    /// Root directory for outputs when neither --out nor the config names one.
    #[arg(long, global = true, env = "GROUPDRO_OUT_ROOT", default_value = "runs")]
    pub out_root: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train/val/test CSVs and a spec sidecar from a generator config.
    Generate(GenerateArgs),
    /// Train one model and record its history.
    Train(TrainArgs),
    /// Run an ERM / upweighting / group DRO grid and compare the best cells.
    Benchmark(BenchmarkArgs),
    /// Run the convergence, reweighting and counterexample checks.
    Theory(TheoryArgs),
    /// Print the summary of a finished run directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON file with `spec`, `n_val`, `n_test` and optionally `balanced_eval`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_total: Option<usize>,
    #[arg(long)]
    pub p_align: Option<f64>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Draw val/test with the training skew instead of balanced groups.
    #[arg(long)]
    pub skewed_eval: bool,
    #[arg(long)]
    pub dry_run: bool,
}

/// Flags shared by `train` and `benchmark`; each overrides the matching
/// `optimizer` field of the config file.
#[derive(Debug, Args)]
pub struct OptimizerFlags {
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub eta_theta: Option<f64>,
    #[arg(long)]
    pub eta_q: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub sampler: Option<String>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory holding train.csv, val.csv and test.csv.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub adjustment_c: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Save a model snapshot every this many checkpoints.
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    #[command(flatten)]
    pub optimizer: OptimizerFlags,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<String>,
    /// Comma-separated grid axes.
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub adjustments: Option<Vec<f64>>,
    #[arg(long)]
    pub adjustment_lambda: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub epochs: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Maximum concurrent runs; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub optimizer: OptimizerFlags,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run only `convergence`, `prop1` or `counterexample`.
    #[arg(long)]
    pub only: Option<String>,
    /// Reference solver tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A directory written by train, benchmark or theory.
    pub dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(code) => code.into(),
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            e.code.into()
        }
    }
}
