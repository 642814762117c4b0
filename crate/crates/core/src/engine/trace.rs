//! Episode traces and their JSONL serialization.
//!
//! One episode per line under schema `asyncthink-trace/1`; round-trips are
//! bit-exact (field order is fixed and all quantities are integers).

use serde::{Deserialize, Serialize};

use super::steps::StepWeigher;
use crate::protocol::{EventKind, FormatError, SubQueryId, TagSyntax};

pub const TRACE_SCHEMA: &str = "asyncthink-trace/1";

/// Runtime limits and grammar for one episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Agent pool capacity: one organizer plus `capacity - 1` worker slots.
    pub capacity: u32,
    /// Max decode steps per sub-query.
    pub worker_budget: u64,
    /// Max organizer decode steps between joins; the budget resets after
    /// each completed join.
    pub organizer_segment_budget: u64,
    /// Global cap on the logical clock.
    pub max_total_steps: u64,
    pub syntax: TagSyntax,
    pub seed: u64,
    #[serde(default)]
    pub weigher: StepWeigher,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            capacity: 2,
            worker_budget: 2048,
            organizer_segment_budget: 2048,
            max_total_steps: 8192,
            syntax: TagSyntax::default(),
            seed: 0,
            weigher: StepWeigher::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.capacity < 2 {
            return Err(format!("capacity {} < 2", self.capacity));
        }
        if self.worker_budget < 1 || self.organizer_segment_budget < 1 {
            return Err("budgets must be at least 1".into());
        }
        if self.max_total_steps < self.organizer_segment_budget {
            return Err(format!(
                "max_total_steps {} < organizer_segment_budget {}",
                self.max_total_steps, self.organizer_segment_budget
            ));
        }
        self.syntax.validate().map_err(|e| e.to_string())
    }
}

/// A protocol event plus the logical-clock step at which it completed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StampedEvent {
    pub kind: EventKind,
    pub id: Option<SubQueryId>,
    pub text: String,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerState {
    Running,
    Finished,
    Truncated,
}

/// One dispatched worker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerSlot {
    pub sub_query_id: SubQueryId,
    pub sub_query: String,
    pub state: WorkerState,
    /// First decode step, one past the step at which the fork close completed.
    pub start_step: u64,
    /// Last decode step: `start_step + steps - 1`.
    pub end_step: u64,
    /// Fragment index (1-based) of the organizer fragment the fork closed in.
    pub fork_fragment: usize,
    /// Worker events with global step stamps.
    pub events: Vec<StampedEvent>,
    /// Text of the first complete RETURN block; empty if absent.
    pub return_payload: String,
}

impl WorkerSlot {
    /// Decode steps consumed by this worker.
    pub fn steps(&self) -> u64 {
        (self.end_step + 1).saturating_sub(self.start_step)
    }
}

/// Binds one completed join to the worker it merged and the fragment its
/// fork closed in. Organizer events strictly after `join_event` up to and
/// including `merge_end_event` are spliced (zero-cost) text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinBinding {
    pub join_event: usize,
    pub merge_end_event: usize,
    /// Fragment index j of the fork (1-based).
    pub fragment: usize,
    pub sub_query_id: SubQueryId,
    /// Index into the trace's worker list.
    pub worker: usize,
}

/// Per-step count of actively decoding agents, organizer included while it
/// is decoding and not blocked at a join.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ActivityRle", into = "ActivityRle")]
pub struct ActivityTimeline {
    pub counts: Vec<u32>,
}

impl ActivityTimeline {
    pub fn total_steps(&self) -> u64 {
        self.counts.len() as u64
    }

    pub fn active_sum(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct ActivityRle {
    total: u64,
    rle: Vec<(u32, u64)>,
}

impl From<ActivityTimeline> for ActivityRle {
    fn from(t: ActivityTimeline) -> Self {
        let mut rle: Vec<(u32, u64)> = Vec::new();
        for &count in &t.counts {
            match rle.last_mut() {
                Some((value, run)) if *value == count => *run += 1,
                _ => rle.push((count, 1)),
            }
        }
        ActivityRle {
            total: t.counts.len() as u64,
            rle,
        }
    }
}

impl TryFrom<ActivityRle> for ActivityTimeline {
    type Error = String;

    fn try_from(r: ActivityRle) -> Result<Self, String> {
        let mut counts = Vec::new();
        for (value, run) in r.rle {
            for _ in 0..run {
                counts.push(value);
            }
        }
        if counts.len() as u64 != r.total {
            return Err(format!(
                "activity rle expands to {} steps but total says {}",
                counts.len(),
                r.total
            ));
        }
        Ok(ActivityTimeline { counts })
    }
}

/// Run bookkeeping attached by the CLI; not part of episode semantics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub episode_id: u64,
    pub query_id: u64,
    pub member: u64,
    pub task: String,
    pub seed: u64,
}

/// The complete record of one organizer-worker thinking run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub schema: String,
    pub query: String,
    pub config: EpisodeConfig,
    pub organizer: Vec<StampedEvent>,
    pub workers: Vec<WorkerSlot>,
    pub bindings: Vec<JoinBinding>,
    pub answer: Option<String>,
    pub error: Option<FormatError>,
    pub activity: ActivityTimeline,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<TraceMeta>,
}

impl EpisodeTrace {
    /// Final logical step: completion step of the last organizer event.
    pub fn total_steps(&self) -> u64 {
        self.organizer.last().map(|e| e.step).unwrap_or(0)
    }

    pub fn n_forks(&self) -> usize {
        self.workers.len()
    }

    pub fn n_joins(&self) -> usize {
        self.bindings.len()
    }

    /// The organizer's full context tail: decoded text with merged payloads
    /// spliced in, exactly as a resumed decoder would see it.
    pub fn organizer_text(&self) -> String {
        self.organizer.iter().map(|e| e.text.as_str()).collect()
    }

    /// True if organizer event `index` lies in a spliced merge region
    /// (strictly after a join request, up to and including its merge end).
    pub fn is_spliced(&self, index: usize) -> bool {
        self.bindings
            .iter()
            .any(|b| index > b.join_event && index <= b.merge_end_event)
    }

    pub fn to_jsonl_line(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    pub fn from_jsonl_line(line: &str) -> Result<EpisodeTrace, String> {
        let trace: EpisodeTrace =
            serde_json::from_str(line).map_err(|e| format!("invalid trace record: {}", e))?;
        if trace.schema != TRACE_SCHEMA {
            return Err(format!(
                "unsupported trace schema {:?} (expected {:?})",
                trace.schema, TRACE_SCHEMA
            ));
        }
        Ok(trace)
    }

    /// Equality ignoring run bookkeeping.
    pub fn same_episode(&self, other: &EpisodeTrace) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.meta = None;
        b.meta = None;
        a == b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activity_rle_round_trip() {
        let t = ActivityTimeline {
            counts: vec![1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 1, 1],
        };
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, r#"{"total":12,"rle":[[1,4],[2,6],[1,2]]}"#);
        let back: ActivityTimeline = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn activity_rle_rejects_bad_total() {
        let bad = r#"{"total":5,"rle":[[1,2]]}"#;
        assert!(serde_json::from_str::<ActivityTimeline>(bad).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = EpisodeConfig::default();
        assert!(c.validate().is_ok());
        c.capacity = 1;
        assert!(c.validate().is_err());
        c.capacity = 2;
        c.max_total_steps = 10;
        assert!(c.validate().is_err());
    }
}
