//! Episode execution under a deterministic logical clock.
//!
//! The organizer drives the run. A fork dispatches a worker whose decoding
//! occupies logical steps independently of the organizer; a join blocks the
//! organizer until that worker finishes, then splices the return payload and
//! the join-close tag into the organizer context at zero step cost. With a
//! deterministic backend the whole trace is a pure function of
//! `(query, config)`.

mod steps;
mod trace;

pub use steps::StepWeigher;
pub use trace::{
    ActivityTimeline, EpisodeConfig, EpisodeTrace, JoinBinding, StampedEvent, TraceMeta,
    WorkerSlot, WorkerState, TRACE_SCHEMA,
};

use std::collections::HashMap;
use thiserror::Error;

use crate::backends::{
    assemble_prompt, BackendError, GenerationRequest, PromptSet, ScriptedBackend, StopCondition,
    StreamHandle, TextBackend,
};
use crate::protocol::{
    EventKind, ProtocolEvent, Role, StreamScanner, SubQueryId, TagKind, Validator,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("episode configuration: {0}")]
    Config(String),
    #[error("backend failure: {source}")]
    Backend {
        source: BackendError,
        /// Whatever had been recorded when the episode aborted.
        partial: Box<EpisodeTrace>,
    },
    #[error("replay diverged: {0}")]
    Replay(ReplayDivergence),
}

/// First point at which a re-execution stopped matching the stored trace.
#[derive(Debug, Clone)]
pub struct ReplayDivergence {
    pub first_step: Option<u64>,
    pub description: String,
}

impl std::fmt::Display for ReplayDivergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.first_step {
            Some(step) => write!(f, "at step {}: {}", step, self.description),
            None => f.write_str(&self.description),
        }
    }
}

/// Upper bound on text held back while no event can complete, so endless
/// zero-weight (all-whitespace) streams still terminate.
const PENDING_BYTE_CAP: usize = 4 * 1024 * 1024;

/// Everything a finished worker pull yields; stamps are worker-local until
/// the join rebases them.
struct WorkerPull {
    events: Vec<StampedEvent>,
    steps: u64,
    state: WorkerState,
    payload: String,
}

fn pull_worker(
    backend: &dyn TextBackend,
    request: GenerationRequest,
    config: &EpisodeConfig,
) -> Result<WorkerPull, BackendError> {
    let mut stream = backend.generate(&request)?;
    let mut scanner = StreamScanner::new(Role::Worker, &config.syntax);
    let weigher = config.weigher;
    let budget = request.max_steps;
    let mut events: Vec<StampedEvent> = Vec::new();
    let mut local: u64 = 0;
    let mut truncated = false;
    let mut stopped = false;

    let process = |batch: Vec<ProtocolEvent>,
                       events: &mut Vec<StampedEvent>,
                       local: &mut u64,
                       truncated: &mut bool,
                       stopped: &mut bool| {
        for ev in batch {
            if *stopped || *truncated {
                break;
            }
            let weight = weigher.weigh(&ev.text);
            if *local + weight > budget {
                if ev.kind == EventKind::Think {
                    let (prefix, took) = weigher.truncate(&ev.text, budget - *local);
                    if !prefix.is_empty() {
                        *local += took;
                        events.push(StampedEvent {
                            kind: EventKind::Think,
                            id: None,
                            text: prefix.to_string(),
                            step: *local,
                        });
                    }
                }
                *truncated = true;
                break;
            }
            *local += weight;
            events.push(StampedEvent {
                kind: ev.kind,
                id: ev.id,
                text: ev.text,
                step: *local,
            });
            if ev.kind == EventKind::ReturnClose {
                *stopped = true;
            }
        }
    };

    loop {
        if truncated || stopped {
            break;
        }
        match stream.next_chunk()? {
            Some(chunk) => {
                let batch = scanner.feed(&chunk);
                process(batch, &mut events, &mut local, &mut truncated, &mut stopped);
                // No event inside the pending text can fit anymore: cut here.
                if !truncated
                    && !stopped
                    && (local + weigher.weigh(scanner.pending_text()) > budget
                        || scanner.pending_text().len() > PENDING_BYTE_CAP)
                {
                    let batch = scanner.finish();
                    process(batch, &mut events, &mut local, &mut truncated, &mut stopped);
                    truncated = true;
                }
            }
            None => {
                let batch = scanner.finish();
                process(batch, &mut events, &mut local, &mut truncated, &mut stopped);
                break;
            }
        }
    }

    // Payload: text of the first complete RETURN block.
    let mut payload = String::new();
    let mut complete = false;
    if let Some(open) = events.iter().position(|e| e.kind == EventKind::ReturnOpen) {
        if let Some(close_off) = events[open..]
            .iter()
            .position(|e| e.kind == EventKind::ReturnClose)
        {
            for ev in &events[open + 1..open + close_off] {
                payload.push_str(&ev.text);
            }
            complete = true;
        }
    }
    let state = if truncated || !complete {
        WorkerState::Truncated
    } else {
        WorkerState::Finished
    };
    Ok(WorkerPull {
        events,
        steps: local,
        state,
        payload,
    })
}

/// What the organizer is currently accumulating text into.
enum Collecting {
    Nothing,
    SubQuery(String),
    Answer(String),
}

/// Runs one episode to completion: the trace ends with a final answer, a
/// format error, or budget exhaustion (recorded as a missing final answer).
pub fn run_episode(
    backend: &dyn TextBackend,
    query: &str,
    config: &EpisodeConfig,
    prompts: &PromptSet,
) -> Result<EpisodeTrace, EngineError> {
    config.validate().map_err(EngineError::Config)?;
    if query.is_empty() {
        return Err(EngineError::Config("query must be nonempty".into()));
    }
    let base_prompt = assemble_prompt(
        &prompts.organizer,
        &prompts.instruction,
        query,
        config.capacity,
        &config.syntax,
    )
    .map_err(|e| EngineError::Config(e.to_string()))?;

    std::thread::scope(|scope| {
        let weigher = config.weigher;
        let mut scanner = StreamScanner::new(Role::Organizer, &config.syntax);
        let mut validator = Validator::new(config.capacity);
        let mut events: Vec<StampedEvent> = Vec::new();
        let mut workers: Vec<WorkerSlot> = Vec::new();
        let mut pending: Vec<Option<std::thread::ScopedJoinHandle<'_, Result<WorkerPull, BackendError>>>> =
            Vec::new();
        let mut bindings: Vec<JoinBinding> = Vec::new();
        let mut active: HashMap<u32, usize> = HashMap::new();
        let mut context = base_prompt;
        let mut clock: u64 = 0;
        let mut decoded_len: usize = 0;
        let mut answer: Option<String> = None;
        let mut collecting = Collecting::Nothing;
        let mut pending_fork: Option<u32> = None;
        let mut segment_index: usize = 0;

        // Joins every outstanding worker thread and fills its slot.
        macro_rules! settle_workers {
            () => {
                for (slot_idx, handle) in pending.iter_mut().enumerate() {
                    if let Some(h) = handle.take() {
                        let slot = &mut workers[slot_idx];
                        match h.join().expect("worker thread must not panic") {
                            Ok(pull) => fill_slot(slot, pull),
                            Err(_) => {
                                // best effort: the episode is already ending
                                slot.state = WorkerState::Truncated;
                                slot.end_step = slot.start_step.saturating_sub(1);
                            }
                        }
                    }
                }
            };
        }

        macro_rules! finalize {
            ($error:expr) => {{
                settle_workers!();
                let total = events.last().map(|e| e.step).unwrap_or(0);
                let activity = compute_activity(&events, &bindings, &workers, weigher, total, config.capacity);
                return Ok(EpisodeTrace {
                    schema: TRACE_SCHEMA.to_string(),
                    query: query.to_string(),
                    config: config.clone(),
                    organizer: events,
                    workers,
                    bindings,
                    answer,
                    error: $error,
                    activity,
                    meta: None,
                });
            }};
        }

        macro_rules! abort_backend {
            ($source:expr) => {{
                settle_workers!();
                let total = events.last().map(|e| e.step).unwrap_or(0);
                let activity = compute_activity(&events, &bindings, &workers, weigher, total, config.capacity);
                return Err(EngineError::Backend {
                    source: $source,
                    partial: Box::new(EpisodeTrace {
                        schema: TRACE_SCHEMA.to_string(),
                        query: query.to_string(),
                        config: config.clone(),
                        organizer: events,
                        workers,
                        bindings,
                        answer,
                        error: None,
                        activity,
                        meta: None,
                    }),
                });
            }};
        }

        'segments: loop {
            let segment_cap = config
                .organizer_segment_budget
                .min(config.max_total_steps.saturating_sub(clock));
            if segment_cap == 0 {
                validator.finish(decoded_len);
                finalize!(validator.error().cloned());
            }
            let request = GenerationRequest {
                role: Role::Organizer,
                prompt: context.clone(),
                max_steps: segment_cap,
                stop_conditions: vec![StopCondition::JoinRequest, StopCondition::AnswerClose],
                stream_handle: StreamHandle::Organizer {
                    segment: segment_index,
                },
            };
            let mut stream = match backend.generate(&request) {
                Ok(s) => s,
                Err(e) => abort_backend!(e),
            };
            let mut segment_steps: u64 = 0;

            loop {
                let chunk = match stream.next_chunk() {
                    Ok(c) => c,
                    Err(e) => abort_backend!(e),
                };
                let (batch, at_end) = match chunk {
                    Some(c) => (scanner.feed(&c), false),
                    None => (scanner.finish(), true),
                };
                for ev in batch {
                    let weight = weigher.weigh(&ev.text);
                    if segment_steps + weight > segment_cap {
                        // Budget exhausted mid-event: keep the fitting prefix
                        // of a Think span, drop an unfitting tag outright.
                        if ev.kind == EventKind::Think {
                            let (prefix, took) = weigher.truncate(&ev.text, segment_cap - segment_steps);
                            if !prefix.is_empty() {
                                clock += took;
                                decoded_len += prefix.len();
                                context.push_str(prefix);
                                events.push(StampedEvent {
                                    kind: EventKind::Think,
                                    id: None,
                                    text: prefix.to_string(),
                                    step: clock,
                                });
                            }
                        }
                        validator.finish(decoded_len);
                        finalize!(validator.error().cloned());
                    }
                    clock += weight;
                    segment_steps += weight;
                    decoded_len += ev.text.len();
                    context.push_str(&ev.text);
                    events.push(StampedEvent {
                        kind: ev.kind,
                        id: ev.id,
                        text: ev.text.clone(),
                        step: clock,
                    });

                    if validator.observe(&ev).is_some() {
                        finalize!(validator.error().cloned());
                    }

                    match ev.kind {
                        EventKind::Think => match &mut collecting {
                            Collecting::SubQuery(buf) | Collecting::Answer(buf) => {
                                buf.push_str(&ev.text)
                            }
                            Collecting::Nothing => {}
                        },
                        EventKind::ForkOpen => {
                            pending_fork = Some(ev.id.expect("fork id").get());
                            collecting = Collecting::SubQuery(String::new());
                        }
                        EventKind::ForkClose => {
                            let id = pending_fork.take().expect("fork close follows open");
                            let sub_query = match std::mem::replace(&mut collecting, Collecting::Nothing)
                            {
                                Collecting::SubQuery(s) => s,
                                _ => String::new(),
                            };
                            let prompt_text = if sub_query.is_empty() {
                                "(empty sub-query)".to_string()
                            } else {
                                sub_query.clone()
                            };
                            let worker_prompt = match assemble_prompt(
                                &prompts.worker,
                                &prompts.instruction,
                                &prompt_text,
                                config.capacity,
                                &config.syntax,
                            ) {
                                Ok(p) => p,
                                Err(e) => abort_backend!(e),
                            };
                            let slot_idx = workers.len();
                            let wreq = GenerationRequest {
                                role: Role::Worker,
                                prompt: worker_prompt,
                                max_steps: config.worker_budget,
                                stop_conditions: vec![StopCondition::ReturnClose],
                                stream_handle: StreamHandle::Worker {
                                    ordinal: slot_idx,
                                    sub_query_id: id,
                                },
                            };
                            workers.push(WorkerSlot {
                                sub_query_id: SubQueryId::new(id, config.syntax.max_id)
                                    .expect("scanner range-checked"),
                                sub_query,
                                state: WorkerState::Running,
                                start_step: clock + 1,
                                end_step: clock,
                                fork_fragment: segment_index + 1,
                                events: Vec::new(),
                                return_payload: String::new(),
                            });
                            pending.push(Some(scope.spawn(move || {
                                pull_worker(backend, wreq, config)
                            })));
                            active.insert(id, slot_idx);
                        }
                        EventKind::JoinRequest => {
                            let id = ev.id.expect("join id").get();
                            let slot_idx = active.remove(&id).expect("validator admitted join");
                            let join_event = events.len() - 1;
                            let pull = match pending[slot_idx]
                                .take()
                                .expect("worker pending")
                                .join()
                                .expect("worker thread must not panic")
                            {
                                Ok(p) => p,
                                Err(e) => abort_backend!(e),
                            };
                            let slot = &mut workers[slot_idx];
                            fill_slot(slot, pull);
                            let merge_at = clock.max(slot.end_step);
                            if !slot.return_payload.is_empty() {
                                context.push_str(&slot.return_payload);
                                events.push(StampedEvent {
                                    kind: EventKind::Think,
                                    id: None,
                                    text: slot.return_payload.clone(),
                                    step: merge_at,
                                });
                            }
                            let close_text = config
                                .syntax
                                .canonical(TagKind::JoinClose)
                                .render(Some(id));
                            context.push_str(&close_text);
                            events.push(StampedEvent {
                                kind: EventKind::JoinMergeEnd,
                                id: ev.id,
                                text: close_text,
                                step: merge_at,
                            });
                            bindings.push(JoinBinding {
                                join_event,
                                merge_end_event: events.len() - 1,
                                fragment: workers[slot_idx].fork_fragment,
                                sub_query_id: SubQueryId::new(id, config.syntax.max_id)
                                    .expect("scanner range-checked"),
                                worker: slot_idx,
                            });
                            clock = merge_at;
                            segment_index += 1;
                            scanner.discard_pending();
                            continue 'segments;
                        }
                        EventKind::AnswerOpen => {
                            collecting = Collecting::Answer(String::new());
                        }
                        EventKind::AnswerClose => {
                            let text = match std::mem::replace(&mut collecting, Collecting::Nothing)
                            {
                                Collecting::Answer(s) => s,
                                _ => String::new(),
                            };
                            answer = Some(text);
                            finalize!(None);
                        }
                        EventKind::JoinMergeEnd
                        | EventKind::ReturnOpen
                        | EventKind::ReturnClose => {}
                    }
                }
                if at_end {
                    validator.finish(decoded_len);
                    finalize!(validator.error().cloned());
                }
                // Nothing inside the pending text can fit in this segment
                // anymore; stop pulling and truncate. finish() can only
                // flush a Think span here: complete tags fire during feed.
                // The byte cap bounds streams of weightless whitespace.
                let pending_weight = weigher.weigh(scanner.pending_text());
                if segment_steps + pending_weight > segment_cap
                    || scanner.pending_text().len() > PENDING_BYTE_CAP
                {
                    let room = segment_cap - segment_steps;
                    if let Some(ev) = scanner.finish().into_iter().next() {
                        let (prefix, took) = weigher.truncate(&ev.text, room);
                        if !prefix.is_empty() {
                            clock += took;
                            decoded_len += prefix.len();
                            context.push_str(prefix);
                            events.push(StampedEvent {
                                kind: EventKind::Think,
                                id: None,
                                text: prefix.to_string(),
                                step: clock,
                            });
                        }
                    }
                    validator.finish(decoded_len);
                    finalize!(validator.error().cloned());
                }
            }
        }
    })
}

fn fill_slot(slot: &mut WorkerSlot, pull: WorkerPull) {
    let base = slot.start_step - 1;
    slot.events = pull
        .events
        .into_iter()
        .map(|mut e| {
            e.step += base;
            e
        })
        .collect();
    slot.end_step = base + pull.steps;
    slot.state = pull.state;
    slot.return_payload = pull.payload;
}

/// Recomputes the per-step active-agent counts from a trace's events and
/// worker slots. The organizer counts while decoding (spliced merge text is
/// free); a worker counts from its start step to its end step, clipped to
/// the episode's final step.
pub fn activity_timeline(trace: &EpisodeTrace) -> ActivityTimeline {
    compute_activity(
        &trace.organizer,
        &trace.bindings,
        &trace.workers,
        trace.config.weigher,
        trace.total_steps(),
        trace.config.capacity,
    )
}

/// Worker-only variant of the activity count (the organizer excluded), kept
/// for analyses that want the alternative accounting.
pub fn worker_activity(trace: &EpisodeTrace) -> Vec<u32> {
    let total = trace.total_steps();
    let mut counts = vec![0u32; total as usize];
    for slot in &trace.workers {
        if slot.steps() == 0 {
            continue;
        }
        for t in slot.start_step..=slot.end_step.min(total) {
            counts[(t - 1) as usize] += 1;
        }
    }
    counts
}

fn compute_activity(
    events: &[StampedEvent],
    bindings: &[JoinBinding],
    workers: &[WorkerSlot],
    weigher: StepWeigher,
    total: u64,
    capacity: u32,
) -> ActivityTimeline {
    let mut counts = vec![0u32; total as usize];
    let spliced = |index: usize| {
        bindings
            .iter()
            .any(|b| index > b.join_event && index <= b.merge_end_event)
    };
    for (index, ev) in events.iter().enumerate() {
        if spliced(index) {
            continue;
        }
        let weight = weigher.weigh(&ev.text);
        if weight == 0 {
            continue;
        }
        for t in (ev.step - weight + 1)..=ev.step {
            counts[(t - 1) as usize] += 1;
        }
    }
    for slot in workers {
        if slot.steps() == 0 {
            continue;
        }
        for t in slot.start_step..=slot.end_step.min(total) {
            counts[(t - 1) as usize] += 1;
        }
    }
    debug_assert!(counts.iter().all(|&c| c >= 1 && c <= capacity));
    ActivityTimeline { counts }
}

/// Re-executes a trace against a scripted backend built from it. The result
/// must be bit-identical; the first differing step is reported otherwise.
pub fn replay(trace: &EpisodeTrace, prompts: &PromptSet) -> Result<EpisodeTrace, EngineError> {
    let backend = ScriptedBackend::from_trace(trace);
    let mut replayed = run_episode(&backend, &trace.query, &trace.config, prompts)?;
    replayed.meta = trace.meta.clone();
    if !replayed.same_episode(trace) {
        return Err(EngineError::Replay(first_divergence(trace, &replayed)));
    }
    Ok(replayed)
}

fn first_divergence(expected: &EpisodeTrace, got: &EpisodeTrace) -> ReplayDivergence {
    for (i, (a, b)) in expected.organizer.iter().zip(&got.organizer).enumerate() {
        if a != b {
            return ReplayDivergence {
                first_step: Some(b.step.min(a.step)),
                description: format!(
                    "organizer event {} differs: expected {:?} {:?} at step {}, got {:?} {:?} at step {}",
                    i, a.kind, a.text, a.step, b.kind, b.text, b.step
                ),
            };
        }
    }
    if expected.organizer.len() != got.organizer.len() {
        return ReplayDivergence {
            first_step: None,
            description: format!(
                "organizer event count differs: expected {}, got {}",
                expected.organizer.len(),
                got.organizer.len()
            ),
        };
    }
    for (i, (a, b)) in expected.workers.iter().zip(&got.workers).enumerate() {
        if a != b {
            return ReplayDivergence {
                first_step: Some(b.start_step.min(a.start_step)),
                description: format!("worker slot {} differs", i),
            };
        }
    }
    ReplayDivergence {
        first_step: None,
        description: "traces differ outside events and workers".into(),
    }
}
