//! Loss masks over the organizer stream.
//!
//! Organizer spans covering a merged payload up to and including the
//! join-close tag are excluded; the initial join tag itself is included, as
//! are all worker-produced tokens. Include and exclude spans partition the
//! organizer text.

use serde::{Deserialize, Serialize};

use super::RewardsError;
use crate::engine::EpisodeTrace;
use crate::protocol::EventKind;

/// A byte span of the owning text with its loss-mask polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanMask {
    pub start: usize,
    pub end: usize,
    pub include: bool,
}

/// One worker's full output text (always fully included).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerMask {
    pub sub_query_id: u32,
    pub text: String,
}

/// Mask skeleton for one episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceMasks {
    pub organizer_text: String,
    pub organizer_spans: Vec<SpanMask>,
    pub workers: Vec<WorkerMask>,
}

impl TraceMasks {
    pub fn excluded<'t>(&'t self) -> impl Iterator<Item = &'t str> {
        self.organizer_spans
            .iter()
            .filter(|s| !s.include)
            .map(|s| &self.organizer_text[s.start..s.end])
    }
}

/// Computes include/exclude spans for the organizer stream and carries the
/// worker texts along. Fails if a join request lacks a binding.
pub fn token_masks(trace: &EpisodeTrace) -> Result<TraceMasks, RewardsError> {
    let organizer_text = trace.organizer_text();

    // byte offset of each event's text
    let mut offsets = Vec::with_capacity(trace.organizer.len() + 1);
    let mut at = 0usize;
    for event in &trace.organizer {
        offsets.push(at);
        at += event.text.len();
    }
    offsets.push(at);

    for (index, event) in trace.organizer.iter().enumerate() {
        if event.kind == EventKind::JoinRequest
            && !trace.is_spliced(index)
            && !trace.bindings.iter().any(|b| b.join_event == index)
        {
            return Err(RewardsError::UnboundJoin { event: index });
        }
    }

    // exclusion regions in event-index space, from the bindings
    let mut exclusions: Vec<(usize, usize)> = trace
        .bindings
        .iter()
        .map(|b| (offsets[b.join_event + 1], offsets[b.merge_end_event + 1]))
        .collect();
    exclusions.sort_unstable();

    let mut spans = Vec::new();
    let mut cursor = 0usize;
    for (start, end) in exclusions {
        if start > cursor {
            spans.push(SpanMask {
                start: cursor,
                end: start,
                include: true,
            });
        }
        if end > start {
            spans.push(SpanMask {
                start,
                end,
                include: false,
            });
        }
        cursor = end;
    }
    if cursor < organizer_text.len() {
        spans.push(SpanMask {
            start: cursor,
            end: organizer_text.len(),
            include: true,
        });
    }

    let workers = trace
        .workers
        .iter()
        .map(|slot| WorkerMask {
            sub_query_id: slot.sub_query_id.get(),
            text: slot.events.iter().map(|e| e.text.as_str()).collect(),
        })
        .collect();

    Ok(TraceMasks {
        organizer_text,
        organizer_spans: spans,
        workers,
    })
}
