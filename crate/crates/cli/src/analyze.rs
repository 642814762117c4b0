//! The `analyze` subcommand: per-episode latency and concurrency CSV, with
//! the DP cross-checked against the event-simulation oracle on every trace.

use std::path::PathBuf;

use clap::Args;

use asyncthink::engine::EpisodeTrace;
use asyncthink::metrics::{
    concurrency_ratio, critical_path_latency, decompose, export_dot, simulate_latency,
    trace_worker_steps,
};

use crate::manifest::{load_traces, write_lines_atomically};
use crate::CliError;

#[derive(Args)]
pub struct AnalyzeArgs {
    /// Trace file (JSONL).
    #[arg(long)]
    traces: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Also write one DOT file per episode into this directory.
    #[arg(long)]
    dot_dir: Option<PathBuf>,
}

pub fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let traces = load_traces(&args.traces)?;
    let mut lines = vec!["episode_id,total_latency,eta,rho,n_J,n_forks,format_error".to_string()];
    for (index, trace) in traces.iter().enumerate() {
        let episode_id = trace
            .meta
            .as_ref()
            .map(|m| m.episode_id)
            .unwrap_or(index as u64);
        let total = episode_latency(trace, episode_id)?;
        let (eta, rho) = concurrency_ratio(&trace.activity, trace.config.capacity);
        let error = trace
            .error
            .as_ref()
            .map(|e| e.class.to_string())
            .unwrap_or_default();
        lines.push(format!(
            "{},{},{:.6},{:.6},{},{},{}",
            episode_id,
            total,
            eta,
            rho,
            trace.n_joins(),
            trace.n_forks(),
            error
        ));
    }
    write_lines_atomically(&args.out, &lines)?;

    if let Some(dir) = &args.dot_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("cannot create {}: {}", dir.display(), e)))?;
        for (index, trace) in traces.iter().enumerate() {
            if trace
                .error
                .as_ref()
                .is_some_and(|e| e.class == asyncthink::FormatErrorClass::JoinNonexistent)
            {
                continue;
            }
            let dot = export_dot(trace)
                .map_err(|e| CliError::Data(format!("episode {}: {}", index, e)))?;
            let path = dir.join(format!("episode-{:04}.dot", index));
            std::fs::write(&path, dot)
                .map_err(|e| CliError::Config(format!("cannot write {}: {}", path.display(), e)))?;
        }
    }
    eprintln!("analyzed {} episodes -> {}", traces.len(), args.out.display());
    Ok(())
}

/// Critical-path latency with the oracle cross-check. A DP/simulation
/// mismatch is a data error, never silently averaged. Traces whose joins
/// cannot be bound fall back to the recorded clock.
fn episode_latency(trace: &EpisodeTrace, episode_id: u64) -> Result<u64, CliError> {
    if trace
        .error
        .as_ref()
        .is_some_and(|e| e.class == asyncthink::FormatErrorClass::JoinNonexistent)
    {
        return Ok(trace.total_steps());
    }
    let decomp = decompose(trace)
        .map_err(|e| CliError::Data(format!("episode {}: {}", episode_id, e)))?;
    let dp = critical_path_latency(&decomp, &trace_worker_steps(trace))
        .map_err(|e| CliError::Data(format!("episode {}: {}", episode_id, e)))?;
    let sim = simulate_latency(trace)
        .map_err(|e| CliError::Data(format!("episode {}: {}", episode_id, e)))?;
    if dp.total != sim {
        return Err(CliError::Data(format!(
            "episode {}: critical-path DP gives {} but the event simulation gives {}",
            episode_id, dp.total, sim
        )));
    }
    Ok(dp.total)
}
