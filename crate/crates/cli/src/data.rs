//! Data utilities: replay verification, dataset generation, structure
//! sampling, and DOT export.

use std::path::PathBuf;

use clap::Args;

use asyncthink::backends::PromptSet;
use asyncthink::engine::{replay, EngineError};
use asyncthink::metrics::export_dot;
use asyncthink::protocol::{render_structure, sample_structure, TagSyntax};
use asyncthink::tasks::{gen_countdown, GenParams};

use crate::manifest::{load_traces, write_lines_atomically};
use crate::CliError;

#[derive(Args)]
pub struct ReplayArgs {
    #[arg(long)]
    traces: PathBuf,
    /// Write the replayed traces here (defaults to verify-only).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn cmd_replay(args: ReplayArgs) -> Result<(), CliError> {
    let traces = load_traces(&args.traces)?;
    let prompts = PromptSet::with_instruction(
        "Work on the multi-solution countdown task described below.",
    );
    let mut lines = Vec::with_capacity(traces.len());
    for (index, trace) in traces.iter().enumerate() {
        let replayed = replay(trace, &prompts).map_err(|e| match e {
            EngineError::Replay(d) => CliError::Data(format!("episode {}: {}", index, d)),
            EngineError::Backend { source, .. } => CliError::Backend(source.to_string()),
            other => CliError::Config(other.to_string()),
        })?;
        lines.push(replayed.to_jsonl_line());
    }
    if let Some(out) = &args.out {
        write_lines_atomically(out, &lines)?;
    }
    eprintln!("replayed {} episodes, all bit-identical", traces.len());
    Ok(())
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    target_min: i64,
    #[arg(long, default_value_t = 1000)]
    target_max: i64,
    #[arg(long, default_value_t = 6)]
    set_size: usize,
    #[arg(long, default_value_t = 4)]
    n_s: usize,
    /// Comma-separated targets to exclude (train/test separation).
    #[arg(long)]
    exclude: Option<String>,
    /// File with one excluded target per line.
    #[arg(long)]
    exclude_file: Option<PathBuf>,
}

pub fn cmd_gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let mut exclude_targets = Vec::new();
    if let Some(list) = &args.exclude {
        for part in list.split(',') {
            let t: i64 = part
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad excluded target {:?}", part)))?;
            exclude_targets.push(t);
        }
    }
    if let Some(path) = &args.exclude_file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {}", path.display(), e)))?;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let t: i64 = line
                .parse()
                .map_err(|_| CliError::Config(format!("bad excluded target {:?}", line)))?;
            exclude_targets.push(t);
        }
    }
    let params = GenParams {
        target_min: args.target_min,
        target_max: args.target_max,
        set_size: args.set_size,
        n_s: args.n_s,
        exclude_targets,
        ..Default::default()
    };
    let mut lines = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let instance = gen_countdown(args.seed.wrapping_add(i as u64), &params)
            .map_err(|e| CliError::Data(e.to_string()))?;
        lines.push(serde_json::to_string(&instance).expect("instance serializes"));
    }
    write_lines_atomically(&args.out, &lines)?;
    eprintln!("generated {} instances -> {}", args.count, args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct SampleStructuresArgs {
    #[arg(long, default_value_t = 2)]
    capacity: u32,
    #[arg(long)]
    n_forks: u32,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn cmd_sample_structures(args: SampleStructuresArgs) -> Result<(), CliError> {
    let syntax = TagSyntax::default();
    let mut lines = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let seed = args.seed.wrapping_add(i as u64);
        let structure = sample_structure(args.capacity, args.n_forks, seed, syntax.max_id)
            .map_err(|e| CliError::Config(e.to_string()))?;
        structure
            .validate(args.capacity)
            .map_err(|e| CliError::Data(e.to_string()))?;
        let record = serde_json::json!({
            "capacity": args.capacity,
            "n_forks": args.n_forks,
            "seed": seed,
            "actions": structure.actions.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
            "rendered": render_structure(&structure, &syntax),
        });
        lines.push(record.to_string());
    }
    write_lines_atomically(&args.out, &lines)?;
    eprintln!("sampled {} structures -> {}", args.count, args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct ExportDotArgs {
    #[arg(long)]
    traces: PathBuf,
    /// Episode index within the trace file.
    #[arg(long, default_value_t = 0)]
    episode: usize,
    #[arg(long)]
    out: PathBuf,
}

pub fn cmd_export_dot(args: ExportDotArgs) -> Result<(), CliError> {
    let traces = load_traces(&args.traces)?;
    let trace = traces.get(args.episode).ok_or_else(|| {
        CliError::Data(format!(
            "episode {} beyond the trace file ({} episodes)",
            args.episode,
            traces.len()
        ))
    })?;
    let dot = export_dot(trace).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(&args.out, dot)
        .map_err(|e| CliError::Config(format!("cannot write {}: {}", args.out.display(), e)))?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}
