//! Rule-based reward system and RL data preparation: accuracy, format, and
//! thinking-concurrency rewards; group-relative advantages shared across an
//! organizer and its workers; and loss masks that exclude worker-returned
//! segments in the organizer stream.

mod masks;

pub use masks::{token_masks, SpanMask, TraceMasks, WorkerMask};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EpisodeTrace;
use crate::metrics::concurrency_ratio;
use crate::tasks::{parse_expression, parse_rational, verify_solution, CountdownInstance};

#[derive(Debug, Error)]
pub enum RewardsError {
    #[error("join at organizer event {event} has no binding")]
    UnboundJoin { event: usize },
    #[error("advantage group needs at least 2 traces, got {0}")]
    GroupTooSmall(usize),
    #[error("reward configuration: {0}")]
    Config(String),
}

/// Reward constants. The threshold `tau` caps the concurrency reward, the
/// weight `lambda` mixes it into the total, `r_fe` is the constant paid for
/// any format error, and `epsilon` floors the advantage normalizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub tau: f64,
    pub lambda: f64,
    pub r_fe: f64,
    pub epsilon: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            tau: 0.5,
            lambda: 0.5,
            r_fe: -1.0,
            epsilon: 1e-6,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardsError> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(RewardsError::Config(format!(
                "tau {} outside (0, 1]",
                self.tau
            )));
        }
        if self.lambda < 0.0 {
            return Err(RewardsError::Config("lambda must be nonnegative".into()));
        }
        if self.r_fe > 0.0 {
            return Err(RewardsError::Config("r_fe must not be positive".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(RewardsError::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Per-episode reward components and the combined scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReward {
    pub accuracy: f64,
    pub concurrency: f64,
    pub has_format_error: bool,
    pub combined: f64,
}

/// Binary accuracy with exact-rational normalization: `2/6` matches `1/3`,
/// `0.3` does not. Falls back to trimmed string equality when either side
/// is not a rational literal.
pub fn accuracy_binary(predicted: &str, gold: &str) -> f64 {
    let matches = match (parse_rational(predicted), parse_rational(gold)) {
        (Some(a), Some(b)) => a == b,
        _ => predicted.trim() == gold.trim(),
    };
    if matches {
        1.0
    } else {
        0.0
    }
}

/// Multi-solution accuracy: `min(n_c, n_s) / n_s` where `n_c` counts
/// submitted solutions that are valid and pairwise distinct.
pub fn accuracy_multi(predicted_solutions: &[&str], instance: &CountdownInstance) -> f64 {
    let mut keys = std::collections::BTreeSet::new();
    for text in predicted_solutions {
        if let Ok(solution) = parse_expression(text) {
            if verify_solution(&solution, instance).is_ok() {
                keys.insert(solution.key());
            }
        }
    }
    (keys.len().min(instance.n_s) as f64) / (instance.n_s as f64)
}

/// Thinking concurrency reward: `min(rho, tau) / tau`.
pub fn concurrency_reward(rho: f64, config: &RewardConfig) -> f64 {
    rho.min(config.tau) / config.tau
}

/// Combined reward: the format-error constant dominates, otherwise
/// `accuracy + lambda * concurrency`.
pub fn combine(
    accuracy: f64,
    concurrency: f64,
    has_format_error: bool,
    config: &RewardConfig,
) -> f64 {
    if has_format_error {
        config.r_fe
    } else {
        accuracy + config.lambda * concurrency
    }
}

/// Scores one trace given its accuracy component.
pub fn score_trace(trace: &EpisodeTrace, accuracy: f64, config: &RewardConfig) -> EpisodeReward {
    let (_, rho) = concurrency_ratio(&trace.activity, trace.config.capacity);
    let concurrency = concurrency_reward(rho, config);
    let has_format_error = trace.error.is_some();
    EpisodeReward {
        accuracy,
        concurrency,
        has_format_error,
        combined: combine(accuracy, concurrency, has_format_error, config),
    }
}

/// Group-relative advantages: standardize rewards within one query group,
/// `A_g = (R_g - mean) / (std + epsilon)`, with all-zero output when the
/// population std collapses below epsilon.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>, RewardsError> {
    let g = rewards.len();
    if g < 2 {
        return Err(RewardsError::GroupTooSmall(g));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = variance.sqrt();
    if std <= epsilon {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / (std + epsilon)).collect())
}

/// One trace's contribution to an RL batch: its text, its include/exclude
/// spans, and the episode's shared advantage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord {
    pub role: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sub_query_id: Option<u32>,
    pub text: String,
    pub spans: Vec<SpanMask>,
    pub advantage: f64,
    pub degenerate: bool,
}

/// All records of one episode (the organizer trace plus every worker trace),
/// each carrying the same advantage.
pub fn episode_records(
    trace: &EpisodeTrace,
    advantage: f64,
    degenerate: bool,
) -> Result<Vec<AdvantageRecord>, RewardsError> {
    let masks = token_masks(trace)?;
    let mut records = Vec::with_capacity(1 + masks.workers.len());
    records.push(AdvantageRecord {
        role: "organizer".into(),
        sub_query_id: None,
        text: masks.organizer_text,
        spans: masks.organizer_spans,
        advantage,
        degenerate,
    });
    for worker in masks.workers {
        let len = worker.text.len();
        records.push(AdvantageRecord {
            role: "worker".into(),
            sub_query_id: Some(worker.sub_query_id),
            text: worker.text,
            spans: vec![SpanMask {
                start: 0,
                end: len,
                include: true,
            }],
            advantage,
            degenerate,
        });
    }
    Ok(records)
}
