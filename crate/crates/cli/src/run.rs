//! The `run` subcommand: execute episodes over a dataset and write traces.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::Args;

use asyncthink::backends::PromptSet;
use asyncthink::engine::{run_episode, EngineError, EpisodeTrace, TraceMeta};
use asyncthink::metrics::concurrency_ratio;
use asyncthink::rewards::score_trace;
use asyncthink::tasks::{mcd_accuracy, render_query, CountdownInstance};

use crate::manifest::{
    load_dataset, parse_answer_gen, parse_backend_spec, parse_error_class, read_kv_file,
    write_lines_atomically, RunManifest,
};
use crate::CliError;

#[derive(Args)]
pub struct RunArgs {
    /// Key-value manifest file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Countdown dataset (JSONL) providing the queries and gold instances.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output trace file (JSONL, one episode per line).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Backend: mock, scripted:PATH, or an http(s) endpoint URL.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    capacity: Option<u32>,
    #[arg(long)]
    worker_budget: Option<u64>,
    #[arg(long)]
    segment_budget: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Tag grammar file (key = pattern).
    #[arg(long)]
    syntax_file: Option<PathBuf>,
    /// Episodes per query (the advantage group size).
    #[arg(long)]
    group_size: Option<u64>,
    /// Take only the first N dataset instances.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent episodes; output is identical regardless of job count.
    #[arg(long)]
    jobs: Option<usize>,
    /// Mock policy: chance of each additional fork.
    #[arg(long)]
    fork_prob: Option<f64>,
    #[arg(long)]
    max_forks: Option<u32>,
    /// Mock answers: solve, solve:DROP_PROB, or fixed:TEXT.
    #[arg(long)]
    answer: Option<String>,
    /// Make the mock deliberately commit a format error class
    /// (duplicate, overflow, join-nonexistent, missing-answer).
    #[arg(long)]
    error_inject: Option<String>,
    /// Model name for HTTP backends.
    #[arg(long)]
    model: Option<String>,
}

fn build_manifest(args: &RunArgs) -> Result<RunManifest, CliError> {
    let mut manifest = RunManifest::default();
    if let Some(path) = &args.config {
        let map = read_kv_file(path)?;
        manifest.apply_kv(&map)?;
    }
    if let Some(v) = &args.dataset {
        manifest.dataset = v.display().to_string();
    }
    if let Some(v) = &args.out {
        manifest.out = v.display().to_string();
    }
    if let Some(v) = &args.backend {
        manifest.backend = parse_backend_spec(v)?;
    }
    if let Some(v) = args.capacity {
        manifest.episode.capacity = v;
    }
    if let Some(v) = args.worker_budget {
        manifest.episode.worker_budget = v;
    }
    if let Some(v) = args.segment_budget {
        manifest.episode.organizer_segment_budget = v;
    }
    if let Some(v) = args.max_steps {
        manifest.episode.max_total_steps = v;
    }
    if let Some(path) = &args.syntax_file {
        manifest.episode.syntax = asyncthink::protocol::TagSyntax::from_kv_file(path)
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    if let Some(v) = args.group_size {
        manifest.group_size = v;
    }
    if let Some(v) = args.limit {
        manifest.limit = Some(v);
    }
    if let Some(v) = args.seed {
        manifest.seed = v;
    }
    if let Some(v) = args.jobs {
        manifest.jobs = v;
    }
    if let Some(v) = args.fork_prob {
        manifest.fork_prob = v;
    }
    if let Some(v) = args.max_forks {
        manifest.max_forks = v;
    }
    if let Some(v) = &args.answer {
        manifest.answer = parse_answer_gen(v)?;
    }
    if let Some(v) = &args.error_inject {
        manifest.error_inject = Some(parse_error_class(v)?);
    }
    if let Some(v) = &args.model {
        manifest.model = v.clone();
    }
    manifest.validate()?;
    Ok(manifest)
}

fn episode_seed(run_seed: u64, episode_id: u64) -> u64 {
    // splitmix64 of the pair, so neighbouring episodes decorrelate
    let mut z = run_seed ^ episode_id.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let manifest = build_manifest(&args)?;
    let instances = load_dataset(Path::new(&manifest.dataset))?;
    let take = manifest.limit.unwrap_or(instances.len());
    let instances: Vec<CountdownInstance> = instances.into_iter().take(take).collect();
    if instances.is_empty() {
        return Err(CliError::Config("dataset has no instances".into()));
    }
    let prepared = manifest.prepare_backend()?;
    let prompts = PromptSet::with_instruction(
        "Work on the multi-solution countdown task described below.",
    );

    struct Job {
        episode_id: u64,
        query_id: u64,
        member: u64,
        query: String,
    }
    let mut jobs = Vec::new();
    for (query_id, instance) in instances.iter().enumerate() {
        for member in 0..manifest.group_size {
            jobs.push(Job {
                episode_id: jobs.len() as u64,
                query_id: query_id as u64,
                member,
                query: render_query(instance),
            });
        }
    }

    let results: Mutex<Vec<Option<Result<EpisodeTrace, CliError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = manifest.jobs.min(jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let at = next.fetch_add(1, Ordering::SeqCst);
                if at >= jobs.len() {
                    break;
                }
                let job = &jobs[at];
                let seed = episode_seed(manifest.seed, job.episode_id);
                let outcome = manifest
                    .backend_for_episode(&prepared, at, seed)
                    .and_then(|backend| {
                        run_episode(backend.as_ref(), &job.query, &manifest.episode, &prompts)
                            .map_err(|e| match e {
                                EngineError::Backend { source, .. } => {
                                    CliError::Backend(source.to_string())
                                }
                                other => CliError::Config(other.to_string()),
                            })
                    })
                    .map(|mut trace| {
                        trace.meta = Some(TraceMeta {
                            episode_id: job.episode_id,
                            query_id: job.query_id,
                            member: job.member,
                            task: "mcd".into(),
                            seed,
                        });
                        trace
                    });
                results.lock().unwrap()[at] = Some(outcome);
            });
        }
    });

    let results = results.into_inner().unwrap();
    let mut traces = Vec::with_capacity(results.len());
    for slot in results {
        match slot.expect("every job ran") {
            Ok(trace) => traces.push(trace),
            // abort with no partial outputs
            Err(err) => return Err(err),
        }
    }

    let lines: Vec<String> = traces.iter().map(|t| t.to_jsonl_line()).collect();
    write_lines_atomically(Path::new(&manifest.out), &lines)?;

    // summary: accuracy, mean latency, mean rho, format-error rate
    let mut accuracy_sum = 0.0;
    let mut latency_sum = 0u64;
    let mut rho_sum = 0.0;
    let mut errors = 0usize;
    for trace in &traces {
        let query_id = trace.meta.as_ref().expect("meta set").query_id as usize;
        let instance = &instances[query_id];
        let answer = trace.answer.as_deref().unwrap_or("");
        let (_, r_a) = mcd_accuracy(answer, instance);
        let reward = score_trace(trace, r_a, &manifest.rewards);
        accuracy_sum += reward.accuracy;
        latency_sum += trace.total_steps();
        let (_, rho) = concurrency_ratio(&trace.activity, trace.config.capacity);
        rho_sum += rho;
        if trace.error.is_some() {
            errors += 1;
        }
    }
    let n = traces.len() as f64;
    println!("episodes: {}", traces.len());
    println!("traces: {}", manifest.out);
    println!("mean accuracy (R_A): {:.4}", accuracy_sum / n);
    println!("mean latency: {:.1}", latency_sum as f64 / n);
    println!("mean rho: {:.4}", rho_sum / n);
    println!("format-error rate: {:.4}", errors as f64 / n);
    Ok(())
}
