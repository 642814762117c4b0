//! Operator-facing command line for the asyncthink engine.
//!
//! Exit codes are stable for scripting: 0 success, 2 configuration error,
//! 3 backend failure, 4 data/schema error.

mod analyze;
mod data;
mod manifest;
mod run;
mod score;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Backend(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Data(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {}", m),
            CliError::Backend(m) => write!(f, "backend failure: {}", m),
            CliError::Data(m) => write!(f, "data error: {}", m),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "asyncthink",
    about = "Run, replay, analyze, and score fork/join thinking episodes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run episodes against a backend and write one trace per line.
    Run(run::RunArgs),
    /// Re-execute recorded traces and verify bit-identical reproduction.
    Replay(data::ReplayArgs),
    /// Per-episode latency and concurrency metrics as CSV.
    Analyze(analyze::AnalyzeArgs),
    /// Score traces with the rule-based reward system.
    Score(score::ScoreArgs),
    /// Generate certified multi-solution countdown instances.
    GenData(data::GenDataArgs),
    /// Sample random valid organizer action structures.
    SampleStructures(data::SampleStructuresArgs),
    /// Export group-relative advantage batches for an external trainer.
    ExportRl(score::ExportRlArgs),
    /// Export one episode's fork-join DAG as DOT.
    ExportDot(data::ExportDotArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run::cmd_run(args),
        Command::Replay(args) => data::cmd_replay(args),
        Command::Analyze(args) => analyze::cmd_analyze(args),
        Command::Score(args) => score::cmd_score(args),
        Command::GenData(args) => data::cmd_gen_data(args),
        Command::SampleStructures(args) => data::cmd_sample_structures(args),
        Command::ExportRl(args) => score::cmd_export_rl(args),
        Command::ExportDot(args) => data::cmd_export_dot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("asyncthink: {}", err);
            ExitCode::from(err.code())
        }
    }
}
