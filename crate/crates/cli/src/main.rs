use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Batch speculative-decoding scheduler simulator.
#[derive(Debug, Parser)]
#[command(name = "tetris-sched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulation and write its trace and report.
    Simulate(SimulateArgs),
    /// Run an experiment grid and write a comparison table.
    Compare(CompareArgs),
    /// Check greedy selection against the exhaustive oracle on random instances.
    OracleCheck(OracleCheckArgs),
    /// Check that draft-then-verify sampling reproduces the target distribution.
    LosslessCheck(LosslessCheckArgs),
    /// Report selector priority-queue operation counts.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON config; its values win over inline flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub capacity: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub extra: Option<usize>,
    /// tetris, sd, dsd or oracle.
    #[arg(long)]
    pub policy: Option<String>,
    /// sequential or parallel.
    #[arg(long)]
    pub pipeline: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out/simulate")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the experiment's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleCheckArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
    #[arg(long, default_value_t = 4)]
    pub max_rows: usize,
    #[arg(long, default_value_t = 5)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 8)]
    pub max_capacity: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct LosslessCheckArgs {
    #[arg(long, default_value_t = 4)]
    pub vocab: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 256)]
    pub max_capacity: usize,
    #[arg(long, default_value_t = 64)]
    pub rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TETRIS_SCHED_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(&args),
        Command::Compare(args) => commands::compare(&args),
        Command::OracleCheck(args) => commands::oracle_check(&args),
        Command::LosslessCheck(args) => commands::lossless_check(&args),
        Command::Bench(args) => commands::bench(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
