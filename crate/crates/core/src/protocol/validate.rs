//! Complete-trace validation against the four-class format-error taxonomy.
//!
//! A sub-query id becomes reusable once its Join completes; only ids that are
//! forked and not yet joined count as active. Validation is total: it returns
//! the earliest error by stream position or confirms the trace is clean.

use std::collections::BTreeSet;

use super::{EventKind, FormatError, FormatErrorClass, ProtocolEvent};

/// Incremental validator; the engine feeds it events as they are decoded and
/// [`validate_trace`] folds it over a finished stream.
#[derive(Debug, Clone)]
pub struct Validator {
    capacity: u32,
    active: BTreeSet<u32>,
    answered: bool,
    error: Option<FormatError>,
}

impl Validator {
    pub fn new(capacity: u32) -> Self {
        Validator {
            capacity,
            active: BTreeSet::new(),
            answered: false,
            error: None,
        }
    }

    pub fn error(&self) -> Option<&FormatError> {
        self.error.as_ref()
    }

    pub fn answered(&self) -> bool {
        self.answered
    }

    /// Ids currently forked and not yet joined.
    pub fn active_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.active.iter().copied()
    }

    /// Observes one organizer event; returns the error if this event caused
    /// one. Events after the final answer or after an error are ignored.
    pub fn observe(&mut self, event: &ProtocolEvent) -> Option<&FormatError> {
        if self.error.is_some() || self.answered {
            return None;
        }
        match event.kind {
            EventKind::ForkOpen => {
                let id = event.id.expect("fork carries id").get();
                if self.active.contains(&id) {
                    self.error = Some(FormatError {
                        class: FormatErrorClass::DuplicateSubQueryIndex,
                        position: event.position,
                        detail: format!("sub-query {} already exists and is being processed", id),
                    });
                } else if self.active.len() as u32 >= self.capacity.saturating_sub(1) {
                    self.error = Some(FormatError {
                        class: FormatErrorClass::AgentPoolOverflow,
                        position: event.position,
                        detail: format!(
                            "fork of sub-query {} with {} active workers at capacity {}",
                            id,
                            self.active.len(),
                            self.capacity
                        ),
                    });
                } else {
                    self.active.insert(id);
                }
            }
            EventKind::JoinRequest => {
                let id = event.id.expect("join carries id").get();
                if !self.active.remove(&id) {
                    self.error = Some(FormatError {
                        class: FormatErrorClass::JoinNonexistent,
                        position: event.position,
                        detail: format!("join of non-existing sub-query {}", id),
                    });
                }
            }
            EventKind::AnswerClose => {
                self.answered = true;
            }
            _ => {}
        }
        self.error.as_ref()
    }

    /// Declares the stream complete; `stream_end` is the byte length of the
    /// decoded stream and anchors a missing-answer error.
    pub fn finish(&mut self, stream_end: usize) -> Option<&FormatError> {
        if self.error.is_none() && !self.answered {
            self.error = Some(FormatError {
                class: FormatErrorClass::MissingFinalAnswer,
                position: stream_end,
                detail: "generation stopped without a final answer".into(),
            });
        }
        self.error.as_ref()
    }
}

/// Validates a complete organizer stream under pool capacity `capacity`.
pub fn validate_trace(events: &[ProtocolEvent], capacity: u32) -> Result<(), FormatError> {
    let mut v = Validator::new(capacity);
    for event in events {
        if v.observe(event).is_some() {
            break;
        }
    }
    let end = events
        .last()
        .map(|e| e.position + e.text.len())
        .unwrap_or(0);
    match v.finish(end) {
        Some(err) => Err(err.clone()),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{scan_text, Role, TagSyntax};

    fn validate(text: &str, capacity: u32) -> Result<(), FormatError> {
        let events = scan_text(text, Role::Organizer, &TagSyntax::default());
        validate_trace(&events, capacity)
    }

    #[test]
    fn duplicate_index_while_active() {
        let text = "<FORK-1>a</FORK-1><FORK-1>b</FORK-1><ANSWER>x</ANSWER>";
        let err = validate(text, 4).unwrap_err();
        assert_eq!(err.class, FormatErrorClass::DuplicateSubQueryIndex);
        assert_eq!(err.position, text.find("<FORK-1>b").unwrap());
    }

    #[test]
    fn id_reusable_after_join() {
        let text = "<FORK-1>a</FORK-1><JOIN-1><FORK-1>b</FORK-1><JOIN-1><ANSWER>x</ANSWER>";
        assert!(validate(text, 2).is_ok());
    }

    #[test]
    fn overflow_at_capacity_two() {
        let text = "<FORK-1>a</FORK-1><FORK-2>b</FORK-2><ANSWER>x</ANSWER>";
        let err = validate(text, 2).unwrap_err();
        assert_eq!(err.class, FormatErrorClass::AgentPoolOverflow);
        assert_eq!(err.position, text.find("<FORK-2>").unwrap());
        // the same stream is fine with a larger pool
        assert!(validate(text, 3).is_ok());
    }

    #[test]
    fn join_nonexistent_and_missing_answer() {
        let err = validate("<JOIN-5>", 4).unwrap_err();
        assert_eq!(err.class, FormatErrorClass::JoinNonexistent);
        assert_eq!(err.position, 0);

        let err = validate("just thinking, no answer", 4).unwrap_err();
        assert_eq!(err.class, FormatErrorClass::MissingFinalAnswer);
        assert_eq!(err.position, "just thinking, no answer".len());
    }

    #[test]
    fn duplicate_takes_precedence_over_overflow() {
        // re-forking an active id is a duplicate even when the pool is full
        let text = "<FORK-1>a</FORK-1><FORK-1>b</FORK-1>";
        let err = validate(text, 2).unwrap_err();
        assert_eq!(err.class, FormatErrorClass::DuplicateSubQueryIndex);
    }

    #[test]
    fn earliest_error_wins() {
        let text = "<JOIN-9>*<FORK-1>a</FORK-1><FORK-1>b</FORK-1>";
        let err = validate(text, 2).unwrap_err();
        assert_eq!(err.class, FormatErrorClass::JoinNonexistent);
        assert_eq!(err.position, 0);
    }

    #[test]
    fn clean_sequential_stream_passes() {
        assert!(validate("think think <ANSWER>7</ANSWER>", 2).is_ok());
    }

    #[test]
    fn unjoined_fork_is_not_an_error_class() {
        // the taxonomy is closed: forking without joining wastes a worker but
        // earns no format penalty
        let text = "<FORK-1>a</FORK-1><ANSWER>x</ANSWER>";
        assert!(validate(text, 2).is_ok());
    }
}
