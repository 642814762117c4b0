//! Pluggable text-generation sources behind one interface: scripted replays,
//! seeded mock policies, and an HTTP client for chat-completions-style
//! streaming endpoints. Also assembles organizer/worker prompts.
//!
//! Backends must be safely invocable from concurrent contexts; each request
//! is independent and per-request state is isolated.

mod http;
mod mock;
mod prompt;
mod scripted;

pub use http::{HttpBackend, HttpConfig};
pub use mock::{AnswerGen, MockBackend, MockPolicy};
pub use prompt::{assemble_prompt, PromptSet, PromptTemplate};
pub use scripted::{ScriptedBackend, WorkerScriptKey};

use thiserror::Error;

use crate::protocol::Role;

/// Tag a backend can be asked to stop at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopCondition {
    /// Organizer segments end at a join request …
    JoinRequest,
    /// … or at the final answer close.
    AnswerClose,
    /// Workers end at the first complete return block.
    ReturnClose,
}

/// Identifies which slot of an episode a request belongs to. Organizer
/// requests carry the segment index (how many merges have completed), which
/// lets a backend resume a paused stream after a join merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamHandle {
    Organizer { segment: usize },
    Worker { ordinal: usize, sub_query_id: u32 },
}

impl std::fmt::Display for StreamHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StreamHandle::Organizer { segment } => write!(f, "organizer/segment-{}", segment),
            StreamHandle::Worker { ordinal, sub_query_id } => {
                write!(f, "worker-{}/sub-query-{}", ordinal, sub_query_id)
            }
        }
    }
}

/// One generation request.
#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub role: Role,
    /// Fully assembled context; for organizer resumes this includes all text
    /// decoded and merged so far.
    pub prompt: String,
    pub max_steps: u64,
    pub stop_conditions: Vec<StopCondition>,
    pub stream_handle: StreamHandle,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("script exhausted for {handle}")]
    ExhaustedScript { handle: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("request timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("prompt slot missing: {0}")]
    MissingSlot(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// A stream of text chunks; chunk boundaries carry no meaning.
pub trait TextStream: Send {
    /// Next chunk, or `None` when generation is complete.
    fn next_chunk(&mut self) -> Result<Option<String>, BackendError>;
}

pub type BoxedStream = Box<dyn TextStream + Send>;

/// A text-generation source. Implementations must tolerate concurrent
/// requests; the engine may hold several worker streams in flight.
pub trait TextBackend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<BoxedStream, BackendError>;
}

/// Stream over a fixed list of chunks, shared by the scripted and mock
/// backends.
pub(crate) struct VecStream {
    chunks: std::vec::IntoIter<String>,
}

impl VecStream {
    pub(crate) fn new(chunks: Vec<String>) -> Self {
        VecStream {
            chunks: chunks.into_iter(),
        }
    }

    pub(crate) fn one(text: String) -> Self {
        Self::new(vec![text])
    }
}

impl TextStream for VecStream {
    fn next_chunk(&mut self) -> Result<Option<String>, BackendError> {
        Ok(self.chunks.next())
    }
}

/// Cuts `text` at the end of the first stop tag it contains, so that no
/// backend ever returns text extending past a matched stop condition.
pub(crate) fn cut_at_stop(
    text: &str,
    role: Role,
    syntax: &crate::protocol::TagSyntax,
    stops: &[StopCondition],
) -> String {
    use crate::protocol::{scan_text, EventKind};
    let events = scan_text(text, role, syntax);
    for event in &events {
        let hit = match event.kind {
            EventKind::JoinRequest => stops.contains(&StopCondition::JoinRequest),
            EventKind::AnswerClose => stops.contains(&StopCondition::AnswerClose),
            EventKind::ReturnClose => stops.contains(&StopCondition::ReturnClose),
            _ => false,
        };
        if hit {
            let end = event.position + event.text.len();
            return text[..end].to_string();
        }
    }
    text.to_string()
}
