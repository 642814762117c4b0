//! Orchestration engine and analysis toolkit for the organizer-worker
//! fork/join thinking protocol.
//!
//! The crate executes thinking episodes against pluggable text-generation
//! backends under a deterministic logical clock, validates protocol
//! compliance, computes critical-path latency and concurrency metrics,
//! scores episodes with the rule-based reward system, and prepares
//! group-relative advantage batches for external RL trainers.

pub mod backends;
pub mod engine;
pub mod metrics;
pub mod protocol;
pub mod rewards;
pub mod tasks;

pub use engine::{run_episode, replay, EpisodeConfig, EpisodeTrace};
pub use protocol::{
    EventKind, FormatError, FormatErrorClass, ProtocolEvent, Role, SubQueryId, TagSyntax,
};
