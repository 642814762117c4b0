//! The `score` and `export-rl` subcommands: rule-based rewards and
//! group-relative advantage batches.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use asyncthink::engine::EpisodeTrace;
use asyncthink::rewards::{
    episode_records, group_advantages, score_trace, AdvantageRecord, RewardConfig,
};
use asyncthink::tasks::{mcd_accuracy, CountdownInstance};

use crate::manifest::{load_dataset, load_traces, write_lines_atomically};
use crate::CliError;

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    traces: PathBuf,
    /// Gold dataset the traces were run against.
    #[arg(long)]
    dataset: PathBuf,
    /// Per-episode reward JSONL.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    r_fe: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
}

pub fn reward_config(
    tau: Option<f64>,
    lambda: Option<f64>,
    r_fe: Option<f64>,
    epsilon: Option<f64>,
) -> Result<RewardConfig, CliError> {
    let mut config = RewardConfig::default();
    if let Some(v) = tau {
        config.tau = v;
    }
    if let Some(v) = lambda {
        config.lambda = v;
    }
    if let Some(v) = r_fe {
        config.r_fe = v;
    }
    if let Some(v) = epsilon {
        config.epsilon = v;
    }
    config
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

/// Accuracy for one trace against its gold instance.
fn scored(
    trace: &EpisodeTrace,
    index: usize,
    dataset: &[CountdownInstance],
) -> Result<(u64, u64, usize, f64), CliError> {
    let meta = trace.meta.as_ref().ok_or_else(|| {
        CliError::Data(format!(
            "trace {} has no run metadata; cannot match it to gold",
            index
        ))
    })?;
    let instance = dataset.get(meta.query_id as usize).ok_or_else(|| {
        CliError::Data(format!(
            "trace {}: query_id {} beyond the dataset ({} instances)",
            index,
            meta.query_id,
            dataset.len()
        ))
    })?;
    let answer = trace.answer.as_deref().unwrap_or("");
    let (n_c, r_a) = mcd_accuracy(answer, instance);
    Ok((meta.episode_id, meta.query_id, n_c, r_a))
}

#[derive(Serialize)]
struct ScoreRecord {
    episode_id: u64,
    query_id: u64,
    n_c: usize,
    #[serde(rename = "R_A")]
    r_a: f64,
    #[serde(rename = "R_eta")]
    r_eta: f64,
    #[serde(rename = "R_i")]
    r_i: f64,
    error_class: Option<String>,
}

pub fn cmd_score(args: ScoreArgs) -> Result<(), CliError> {
    let config = reward_config(args.tau, args.lambda, args.r_fe, args.epsilon)?;
    let traces = load_traces(&args.traces)?;
    let dataset = load_dataset(&args.dataset)?;
    let mut lines = Vec::with_capacity(traces.len());
    let mut n_c_values = Vec::with_capacity(traces.len());
    let mut n_s_max = 1usize;
    for (index, trace) in traces.iter().enumerate() {
        let (episode_id, query_id, n_c, r_a) = scored(trace, index, &dataset)?;
        let reward = score_trace(trace, r_a, &config);
        n_s_max = n_s_max.max(dataset[query_id as usize].n_s);
        n_c_values.push(n_c);
        let record = ScoreRecord {
            episode_id,
            query_id,
            n_c,
            r_a: reward.accuracy,
            r_eta: reward.concurrency,
            r_i: reward.combined,
            error_class: trace.error.as_ref().map(|e| e.class.to_string()),
        };
        lines.push(serde_json::to_string(&record).expect("record serializes"));
    }
    write_lines_atomically(&args.out, &lines)?;

    // ">= a Correct" curve: fraction of episodes with at least a unique
    // correct solutions, monotone nonincreasing in a
    let total = n_c_values.len() as f64;
    let mut curve = BTreeMap::new();
    for a in 1..=n_s_max {
        let hits = n_c_values.iter().filter(|&&n| n >= a).count();
        curve.insert(a.to_string(), hits as f64 / total);
    }
    let summary = serde_json::json!({
        "episodes": n_c_values.len(),
        "ge_correct": curve,
        "defaults_in_effect": {
            "tau": config.tau,
            "lambda": config.lambda,
            "r_fe": config.r_fe,
            "epsilon": config.epsilon,
        },
    });
    println!("{}", summary);
    Ok(())
}

#[derive(Args)]
pub struct ExportRlArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Advantage-batch JSONL: one record per organizer/worker trace.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    r_fe: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Serialize)]
struct ExportRecord {
    episode_id: u64,
    query_id: u64,
    #[serde(flatten)]
    record: AdvantageRecord,
}

pub fn cmd_export_rl(args: ExportRlArgs) -> Result<(), CliError> {
    let config = reward_config(args.tau, args.lambda, args.r_fe, args.epsilon)?;
    let traces = load_traces(&args.traces)?;
    let dataset = load_dataset(&args.dataset)?;

    // group traces by query id
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (index, trace) in traces.iter().enumerate() {
        let meta = trace.meta.as_ref().ok_or_else(|| {
            CliError::Data(format!("trace {} has no run metadata", index))
        })?;
        groups.entry(meta.query_id).or_default().push(index);
    }

    let mut lines = Vec::new();
    let mut degenerate_groups = 0usize;
    for (query_id, members) in &groups {
        if members.len() < 2 {
            return Err(CliError::Data(format!(
                "group for query {} has {} trace(s); advantages need at least 2",
                query_id,
                members.len()
            )));
        }
        let mut rewards = Vec::with_capacity(members.len());
        for &index in members {
            let (_, _, _, r_a) = scored(&traces[index], index, &dataset)?;
            rewards.push(score_trace(&traces[index], r_a, &config).combined);
        }
        let advantages = group_advantages(&rewards, config.epsilon)
            .map_err(|e| CliError::Data(e.to_string()))?;
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
            / rewards.len() as f64)
            .sqrt();
        let degenerate = std <= config.epsilon;
        if degenerate {
            degenerate_groups += 1;
        }
        for (&index, &advantage) in members.iter().zip(&advantages) {
            let trace = &traces[index];
            let meta = trace.meta.as_ref().expect("checked above");
            let records = episode_records(trace, advantage, degenerate)
                .map_err(|e| CliError::Data(format!("episode {}: {}", meta.episode_id, e)))?;
            for record in records {
                let wrapped = ExportRecord {
                    episode_id: meta.episode_id,
                    query_id: meta.query_id,
                    record,
                };
                lines.push(serde_json::to_string(&wrapped).expect("record serializes"));
            }
        }
    }
    write_lines_atomically(&args.out, &lines)?;
    eprintln!(
        "exported {} records from {} groups ({} degenerate) -> {}",
        lines.len(),
        groups.len(),
        degenerate_groups,
        args.out.display()
    );
    Ok(())
}
