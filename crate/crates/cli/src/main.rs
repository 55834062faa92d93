//! `svoflow` command-line driver.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "svoflow", version, about = "Multi-agent traffic-flow simulation with social value orientation contexts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a deterministic case file.
    GenCases(GenCasesArgs),
    /// Run flow-only episodes and report flow metrics.
    Rollout(RolloutArgs),
    /// Evaluate an ego policy against each of several flows.
    Evaluate(EvaluateArgs),
    /// Re-simulate logged episodes and check them bitwise.
    Replay(ReplayArgs),
    /// Paired comparison of two log files over matching episodes.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct GenCasesArgs {
    /// Bundled scenario name or scenario file.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    /// `uniform` or `fixed:<degrees>`.
    #[arg(long, default_value = "uniform")]
    svo: String,
    /// Agents per case (scenario default when omitted).
    #[arg(long)]
    agents: Option<usize>,
    /// Output file (default: under $SVOFLOW_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DetailArg {
    Full,
    Summary,
}

#[derive(Debug, Args)]
struct RunOverrides {
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    repeats: Option<u32>,
    /// Master seed (overrides `master_seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Communication mode (overrides `flow.comm_mode`).
    #[arg(long)]
    comm_mode: Option<String>,
    #[arg(long, value_enum)]
    log_detail: Option<DetailArg>,
}

#[derive(Debug, Args)]
struct RolloutArgs {
    #[arg(long)]
    config: PathBuf,
    /// Flow policy (overrides `flow.policy`).
    #[arg(long)]
    flow: Option<String>,
    #[command(flatten)]
    overrides: RunOverrides,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Ego weight file (overrides `ego.weights`).
    #[arg(long)]
    ego_weights: Option<PathBuf>,
    /// Comma-separated flows: `idm`, `neural:<path>`, optionally `label=`-prefixed.
    #[arg(long, value_delimiter = ',')]
    flows: Vec<String>,
    #[command(flatten)]
    overrides: RunOverrides,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    /// Write the world state after this step as JSON.
    #[arg(long)]
    dump_step: Option<u32>,
    /// Scenario file for logs recorded on a custom map.
    #[arg(long)]
    scenario: Option<String>,
    /// Where to write the dump (default: stdout).
    #[arg(long)]
    dump_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScopeArg {
    Flow,
    Ego,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_enum, default_value = "flow")]
    scope: ScopeArg,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenCases(a) => commands::gen_cases(a),
        Command::Rollout(a) => commands::rollout(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Replay(a) => commands::replay(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("svoflow: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
