//! Organizer-worker protocol: tag grammar, streaming scanners, trace
//! validation against the closed format-error taxonomy, and random sampling
//! of valid thinking structures.
//!
//! Everything here is pure and reentrant. Scanners carry explicit state and
//! can be handed between execution contexts freely.

mod scanner;
mod structure;
mod syntax;
mod validate;

pub use scanner::{scan_text, ScanDiagnostic, StreamScanner};
pub use structure::{render_structure, sample_structure, Action, ActionStructure};
pub use syntax::{TagKind, TagSyntax, TagTemplate, DEFAULT_MAX_ID};
pub use validate::{validate_trace, Validator};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Positive identifier distinguishing one sub-query from the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubQueryId(u32);

impl SubQueryId {
    /// Builds an id, enforcing `1 <= value <= max`.
    pub fn new(value: u32, max: u32) -> Result<Self, ProtocolError> {
        if value == 0 || value > max {
            Err(ProtocolError::IdOutOfRange { value, max })
        } else {
            Ok(SubQueryId(value))
        }
    }

    pub fn get(&self) -> u32 {
        self.0
    }
}

impl std::fmt::Display for SubQueryId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Which role a stream belongs to; the two roles recognize different tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Organizer,
    Worker,
}

/// Kind of a parsed protocol event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Think,
    ForkOpen,
    ForkClose,
    JoinRequest,
    JoinMergeEnd,
    ReturnOpen,
    ReturnClose,
    AnswerOpen,
    AnswerClose,
}

impl EventKind {
    /// True for the kinds that carry a sub-query id.
    pub fn carries_id(&self) -> bool {
        matches!(
            self,
            EventKind::ForkOpen
                | EventKind::ForkClose
                | EventKind::JoinRequest
                | EventKind::JoinMergeEnd
        )
    }
}

/// A parsed organizer/worker action or text span.
///
/// `text` holds the Think span for `Think` events and the raw tag lexeme for
/// tag events; `position` is the byte offset of the span start within the
/// scanned stream (decoded text only — spliced join payloads are not part of
/// any scanned stream).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolEvent {
    pub kind: EventKind,
    pub id: Option<SubQueryId>,
    pub text: String,
    pub position: usize,
}

impl ProtocolEvent {
    pub fn think(text: impl Into<String>, position: usize) -> Self {
        ProtocolEvent {
            kind: EventKind::Think,
            id: None,
            text: text.into(),
            position,
        }
    }

    pub fn tag(kind: EventKind, id: Option<SubQueryId>, text: impl Into<String>, position: usize) -> Self {
        debug_assert_eq!(kind.carries_id(), id.is_some());
        ProtocolEvent {
            kind,
            id,
            text: text.into(),
            position,
        }
    }
}

/// The four organizer format-error classes. The taxonomy is closed: no other
/// class exists, and anything unparseable is plain text rather than an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatErrorClass {
    DuplicateSubQueryIndex,
    AgentPoolOverflow,
    JoinNonexistent,
    MissingFinalAnswer,
}

impl std::fmt::Display for FormatErrorClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FormatErrorClass::DuplicateSubQueryIndex => "duplicate_sub_query_index",
            FormatErrorClass::AgentPoolOverflow => "agent_pool_overflow",
            FormatErrorClass::JoinNonexistent => "join_nonexistent",
            FormatErrorClass::MissingFinalAnswer => "missing_final_answer",
        };
        f.write_str(s)
    }
}

/// A protocol violation that earns the constant format-error reward.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatError {
    pub class: FormatErrorClass,
    /// Byte offset in the organizer's decoded stream.
    pub position: usize,
    pub detail: String,
}

impl std::fmt::Display for FormatError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} at {}: {}", self.class, self.position, self.detail)
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("bad tag pattern {pattern:?}: {reason}")]
    BadSyntaxPattern { pattern: String, reason: String },
    #[error("sub-query id {value} out of range 1..={max}")]
    IdOutOfRange { value: u32, max: u32 },
    #[error("invalid action structure: {0}")]
    InvalidStructure(String),
    #[error("n_forks {requested} exceeds the id bound {max}")]
    TooManyForks { requested: u32, max: u32 },
}
