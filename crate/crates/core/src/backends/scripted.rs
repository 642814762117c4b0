//! Backend that replays recorded outputs verbatim per role and slot.

use std::collections::HashMap;

use super::{
    cut_at_stop, BackendError, BoxedStream, GenerationRequest, StreamHandle, TextBackend,
    VecStream,
};
use crate::engine::EpisodeTrace;
use crate::protocol::{Role, TagSyntax};

/// Keys a worker script by dispatch order and sub-query id, matching the
/// engine's [`StreamHandle::Worker`].
pub type WorkerScriptKey = (usize, u32);

/// Replays organizer segments and worker outputs from fixed text. Requests
/// beyond the recorded content fail with `ExhaustedScript`.
pub struct ScriptedBackend {
    syntax: TagSyntax,
    organizer_segments: Vec<String>,
    workers: HashMap<WorkerScriptKey, String>,
}

impl ScriptedBackend {
    pub fn new(
        syntax: TagSyntax,
        organizer_segments: Vec<String>,
        workers: HashMap<WorkerScriptKey, String>,
    ) -> Self {
        ScriptedBackend {
            syntax,
            organizer_segments,
            workers,
        }
    }

    /// Builds the script that reproduces `trace` exactly: organizer decoded
    /// text split at the join merges, worker outputs from their slots.
    pub fn from_trace(trace: &EpisodeTrace) -> Self {
        let mut segments = Vec::new();
        let mut start = 0usize;
        for binding in &trace.bindings {
            let text: String = trace.organizer[start..=binding.join_event]
                .iter()
                .map(|e| e.text.as_str())
                .collect();
            segments.push(text);
            start = binding.merge_end_event + 1;
        }
        let tail: String = trace.organizer[start.min(trace.organizer.len())..]
            .iter()
            .map(|e| e.text.as_str())
            .collect();
        segments.push(tail);

        let mut workers = HashMap::new();
        for (ordinal, slot) in trace.workers.iter().enumerate() {
            let text: String = slot.events.iter().map(|e| e.text.as_str()).collect();
            workers.insert((ordinal, slot.sub_query_id.get()), text);
        }
        ScriptedBackend {
            syntax: trace.config.syntax.clone(),
            organizer_segments: segments,
            workers,
        }
    }
}

impl TextBackend for ScriptedBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<BoxedStream, BackendError> {
        let text = match request.stream_handle {
            StreamHandle::Organizer { segment } => self
                .organizer_segments
                .get(segment)
                .cloned()
                .ok_or_else(|| BackendError::ExhaustedScript {
                    handle: request.stream_handle.to_string(),
                })?,
            StreamHandle::Worker {
                ordinal,
                sub_query_id,
            } => self
                .workers
                .get(&(ordinal, sub_query_id))
                .cloned()
                .ok_or_else(|| BackendError::ExhaustedScript {
                    handle: request.stream_handle.to_string(),
                })?,
        };
        let role = match request.stream_handle {
            StreamHandle::Organizer { .. } => Role::Organizer,
            StreamHandle::Worker { .. } => Role::Worker,
        };
        let cut = cut_at_stop(&text, role, &self.syntax, &request.stop_conditions);
        Ok(Box::new(VecStream::one(cut)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::StopCondition;

    fn req(handle: StreamHandle, stops: Vec<StopCondition>) -> GenerationRequest {
        GenerationRequest {
            role: Role::Organizer,
            prompt: "p".into(),
            max_steps: 100,
            stop_conditions: stops,
            stream_handle: handle,
        }
    }

    #[test]
    fn exhausted_script_on_unrecorded_slot() {
        let backend = ScriptedBackend::new(TagSyntax::default(), vec!["a".into()], HashMap::new());
        let result = backend.generate(&req(
            StreamHandle::Worker {
                ordinal: 0,
                sub_query_id: 1,
            },
            vec![StopCondition::ReturnClose],
        ));
        match result {
            Err(BackendError::ExhaustedScript { .. }) => {}
            Err(other) => panic!("unexpected error {}", other),
            Ok(_) => panic!("expected ExhaustedScript"),
        }
    }

    #[test]
    fn stop_condition_truncates_mid_script() {
        let backend = ScriptedBackend::new(
            TagSyntax::default(),
            vec!["a <JOIN-1> trailing text that must not leak".into()],
            HashMap::new(),
        );
        let mut stream = backend
            .generate(&req(
                StreamHandle::Organizer { segment: 0 },
                vec![StopCondition::JoinRequest],
            ))
            .unwrap();
        let text = stream.next_chunk().unwrap().unwrap();
        assert_eq!(text, "a <JOIN-1>");
        assert_eq!(stream.next_chunk().unwrap(), None);
    }
}
