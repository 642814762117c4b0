//! Efficiency metrics over traces: critical-path latency via the fragment
//! dynamic program, an independent discrete-event simulation oracle, and the
//! thinking concurrency ratio. Pure functions over immutable traces.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::engine::{ActivityTimeline, EpisodeTrace};
use crate::protocol::EventKind;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("join {join_index} has no fork binding")]
    UnboundJoin { join_index: usize },
    #[error("no step count for worker slot {worker}")]
    MissingWorkerSteps { worker: usize },
    #[error("simulation deadlock: {0}")]
    Deadlock(String),
}

/// A fork recorded inside a fragment: which worker it dispatched and how many
/// fragment steps it took to finish the fork tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForkMark {
    pub sub_query_id: u32,
    /// Index into the trace's worker list.
    pub worker: usize,
    /// Organizer steps within the fragment up to and including the fork
    /// close tag.
    pub steps_to_fork_close: u64,
}

/// One organizer fragment; fragment `index` (1-based) ends at the
/// `index`-th join request, and the final fragment runs to the answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    pub index: usize,
    /// Organizer decode steps in this fragment (spliced payloads cost 0).
    pub steps: u64,
    pub fork_marks: Vec<ForkMark>,
}

/// A join bound to the fragment of its fork and the worker it merged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinSpec {
    /// 1-based join index i.
    pub index: usize,
    /// Fragment index j of the bound fork.
    pub fragment: usize,
    pub sub_query_id: u32,
    pub worker: usize,
}

/// The organizer stream split at join positions into `n_joins + 1`
/// fragments: the latency DP's input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentDecomposition {
    pub fragments: Vec<Fragment>,
    pub joins: Vec<JoinSpec>,
    pub n_joins: usize,
}

/// Splits the organizer stream at completed joins. Merged payload steps are
/// excluded (they are spliced, not decoded), so fragment step counts sum to
/// the organizer's total decode steps.
pub fn decompose(trace: &EpisodeTrace) -> Result<FragmentDecomposition, MetricsError> {
    // every join request must carry a binding
    let join_events: Vec<usize> = trace
        .organizer
        .iter()
        .enumerate()
        .filter(|(i, e)| e.kind == EventKind::JoinRequest && !trace.is_spliced(*i))
        .map(|(i, _)| i)
        .collect();
    for (join_index, event_index) in join_events.iter().enumerate() {
        if !trace.bindings.iter().any(|b| b.join_event == *event_index) {
            return Err(MetricsError::UnboundJoin {
                join_index: join_index + 1,
            });
        }
    }

    let n_joins = trace.bindings.len();
    let mut fragments = Vec::with_capacity(n_joins + 1);
    let mut joins = Vec::with_capacity(n_joins);
    let mut fragment_start_stamp = 0u64;
    for (i, binding) in trace.bindings.iter().enumerate() {
        let join_stamp = trace.organizer[binding.join_event].step;
        fragments.push(Fragment {
            index: i + 1,
            steps: join_stamp - fragment_start_stamp,
            fork_marks: Vec::new(),
        });
        joins.push(JoinSpec {
            index: i + 1,
            fragment: binding.fragment,
            sub_query_id: binding.sub_query_id.get(),
            worker: binding.worker,
        });
        fragment_start_stamp = trace.organizer[binding.merge_end_event].step;
    }
    let last_decoded_stamp = trace
        .organizer
        .iter()
        .enumerate()
        .filter(|(i, _)| !trace.is_spliced(*i))
        .map(|(_, e)| e.step)
        .last()
        .unwrap_or(0)
        .max(fragment_start_stamp);
    fragments.push(Fragment {
        index: n_joins + 1,
        steps: last_decoded_stamp - fragment_start_stamp,
        fork_marks: Vec::new(),
    });

    // fragment start stamps again, to place fork marks
    let mut starts = vec![0u64];
    for binding in &trace.bindings {
        starts.push(trace.organizer[binding.merge_end_event].step);
    }
    for (worker, slot) in trace.workers.iter().enumerate() {
        let j = slot.fork_fragment;
        if j == 0 || j > fragments.len() {
            continue;
        }
        let fork_close_stamp = slot.start_step - 1;
        fragments[j - 1].fork_marks.push(ForkMark {
            sub_query_id: slot.sub_query_id.get(),
            worker,
            steps_to_fork_close: fork_close_stamp - starts[j - 1],
        });
    }
    Ok(FragmentDecomposition {
        fragments,
        joins,
        n_joins,
    })
}

/// Per-worker decode step counts, keyed by worker slot index. Sub-query ids
/// are reusable after a join, so the slot index, not the id, names a worker.
pub type WorkerSteps = BTreeMap<usize, u64>;

/// Step counts taken from a trace's worker slots.
pub fn trace_worker_steps(trace: &EpisodeTrace) -> WorkerSteps {
    trace
        .workers
        .iter()
        .enumerate()
        .map(|(i, s)| (i, s.steps()))
        .collect()
}

/// Per-fragment completion latencies and the critical-path total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencyResult {
    /// `completion[i]` is l_i for i in 0..=n_joins+1; l_0 = 0.
    pub completion: Vec<u64>,
    pub total: u64,
    /// Steps the organizer idled at each join.
    pub per_join_wait: Vec<u64>,
}

/// The fragment dynamic program:
///
/// l_0 = 0;
/// l_i = max(l_{i-1} + f_i, l_{j-1} + f_j^{before-fork-k} + f^{query-k})
///       for 1 <= i <= n_J;
/// total = l_{n_J} + f_{n_J+1}.
pub fn critical_path_latency(
    decomp: &FragmentDecomposition,
    worker_steps: &WorkerSteps,
) -> Result<LatencyResult, MetricsError> {
    let mut completion = vec![0u64];
    let mut per_join_wait = Vec::with_capacity(decomp.n_joins);
    for join in &decomp.joins {
        let i = join.index;
        let f_i = decomp.fragments[i - 1].steps;
        let j = join.fragment;
        let mark = decomp.fragments[j - 1]
            .fork_marks
            .iter()
            .find(|m| m.worker == join.worker)
            .ok_or(MetricsError::UnboundJoin { join_index: i })?;
        let worker_steps_k = *worker_steps
            .get(&join.worker)
            .ok_or(MetricsError::MissingWorkerSteps {
                worker: join.worker,
            })?;
        let organizer_arrives = completion[i - 1] + f_i;
        let worker_done = completion[j - 1] + mark.steps_to_fork_close + worker_steps_k;
        completion.push(organizer_arrives.max(worker_done));
        per_join_wait.push(worker_done.saturating_sub(organizer_arrives));
    }
    let total = completion[decomp.n_joins] + decomp.fragments[decomp.n_joins].steps;
    completion.push(total);
    Ok(LatencyResult {
        completion,
        total,
        per_join_wait,
    })
}

enum SimAction {
    Fork(usize),
    Join(usize),
    End,
}

/// Independent latency oracle: a discrete-event simulation that advances
/// every active agent one step per tick and blocks the organizer at unmet
/// joins. Step counts are re-derived from event texts with the trace's
/// weigher, so the oracle shares no arithmetic with the DP or the engine's
/// clock stamps.
pub fn simulate_latency(trace: &EpisodeTrace) -> Result<u64, MetricsError> {
    let weigher = trace.config.weigher;

    // organizer tape: (decode units, action fired when the last unit ends)
    let mut tape: Vec<(u64, Option<SimAction>)> = Vec::new();
    let mut fork_ordinal = 0usize;
    for (index, event) in trace.organizer.iter().enumerate() {
        if trace.is_spliced(index) {
            continue;
        }
        let units = weigher.weigh(&event.text);
        let action = match event.kind {
            EventKind::ForkClose => {
                let w = fork_ordinal;
                fork_ordinal += 1;
                Some(SimAction::Fork(w))
            }
            EventKind::JoinRequest => {
                let binding = trace
                    .bindings
                    .iter()
                    .position(|b| b.join_event == index)
                    .map(|p| trace.bindings[p].worker);
                match binding {
                    Some(w) => Some(SimAction::Join(w)),
                    None => {
                        return Err(MetricsError::UnboundJoin { join_index: index })
                    }
                }
            }
            EventKind::AnswerClose => Some(SimAction::End),
            _ => None,
        };
        tape.push((units, action));
    }

    struct SimWorker {
        remaining: u64,
        started: bool,
        first_tick: u64,
    }
    let mut sim_workers: Vec<SimWorker> = trace
        .workers
        .iter()
        .map(|slot| SimWorker {
            remaining: slot
                .events
                .iter()
                .map(|e| weigher.weigh(&e.text))
                .sum::<u64>(),
            started: false,
            first_tick: 0,
        })
        .collect();

    let mut t: u64 = 0;
    let mut last_decode_tick: u64 = 0;
    let mut blocked_on: Option<usize> = None;
    let mut tape_iter = tape.into_iter();
    let mut current: Option<(u64, Option<SimAction>)> = None;
    let guard = trace
        .config
        .max_total_steps
        .saturating_mul(4)
        .saturating_add(1024);

    // Fires an action at tick `t`; Ok(true) means the episode ended.
    let fire = |action: Option<SimAction>,
                t: u64,
                workers: &mut Vec<SimWorker>,
                blocked_on: &mut Option<usize>|
     -> Result<bool, MetricsError> {
        match action {
            Some(SimAction::End) => Ok(true),
            Some(SimAction::Fork(w)) => {
                workers[w].started = true;
                workers[w].first_tick = t + 1;
                Ok(false)
            }
            Some(SimAction::Join(w)) => {
                if !workers[w].started {
                    return Err(MetricsError::Deadlock(format!(
                        "join of worker {} that never started",
                        w
                    )));
                }
                if workers[w].remaining > 0 {
                    *blocked_on = Some(w);
                }
                Ok(false)
            }
            None => Ok(false),
        }
    };

    loop {
        // While unblocked, line up the next unit group; zero-weight events
        // fire their actions instantly.
        while blocked_on.is_none() && current.is_none() {
            match tape_iter.next() {
                Some((0, action)) => {
                    if fire(action, t, &mut sim_workers, &mut blocked_on)? {
                        return Ok(last_decode_tick);
                    }
                }
                Some((units, action)) => current = Some((units, action)),
                // stream ended without an answer: the episode ends at the
                // organizer's last decoded tick
                None => return Ok(last_decode_tick),
            }
        }

        t += 1;
        if t > guard {
            return Err(MetricsError::Deadlock(
                "simulation exceeded the step guard".into(),
            ));
        }

        // workers decode during this tick
        for w in sim_workers.iter_mut() {
            if w.started && w.remaining > 0 && t >= w.first_tick {
                w.remaining -= 1;
            }
        }

        if let Some(k) = blocked_on {
            if sim_workers[k].remaining == 0 {
                // merge completes this tick; the organizer resumes next tick
                blocked_on = None;
            }
            continue;
        }

        // organizer decodes one unit
        let (units, _) = current.as_mut().expect("unit fetched");
        *units -= 1;
        last_decode_tick = t;
        if *units == 0 {
            let fired = current.take().expect("current set").1;
            if fire(fired, t, &mut sim_workers, &mut blocked_on)? {
                return Ok(t);
            }
        }
    }
}

/// Thinking concurrency: `eta` is the mean number of actively decoding
/// agents per step; `rho = eta / capacity`.
pub fn concurrency_ratio(timeline: &ActivityTimeline, capacity: u32) -> (f64, f64) {
    let total = timeline.total_steps();
    if total == 0 {
        return (0.0, 0.0);
    }
    let eta = timeline.active_sum() as f64 / total as f64;
    (eta, eta / f64::from(capacity))
}

/// DOT rendering of the fork-join DAG: fragments as nodes, fork and join
/// edges labeled with step counts.
pub fn export_dot(trace: &EpisodeTrace) -> Result<String, MetricsError> {
    let decomp = decompose(trace)?;
    let steps = trace_worker_steps(trace);
    let mut out = String::from("digraph episode {\n  rankdir=LR;\n  node [shape=box];\n");
    for fragment in &decomp.fragments {
        out.push_str(&format!(
            "  f{idx} [label=\"fragment {idx}\\nf={steps}\"];\n",
            idx = fragment.index,
            steps = fragment.steps
        ));
    }
    for (i, slot) in trace.workers.iter().enumerate() {
        out.push_str(&format!(
            "  w{i} [shape=ellipse, label=\"worker {id}\\nf={steps}\"];\n",
            i = i,
            id = slot.sub_query_id.get(),
            steps = steps.get(&i).copied().unwrap_or(0)
        ));
    }
    for i in 1..decomp.fragments.len() {
        out.push_str(&format!(
            "  f{} -> f{} [label=\"f={}\"];\n",
            i,
            i + 1,
            decomp.fragments[i].steps
        ));
    }
    for fragment in &decomp.fragments {
        for mark in &fragment.fork_marks {
            out.push_str(&format!(
                "  f{} -> w{} [label=\"fork@{}\"];\n",
                fragment.index, mark.worker, mark.steps_to_fork_close
            ));
        }
    }
    for join in &decomp.joins {
        out.push_str(&format!(
            "  w{} -> f{} [label=\"join {}\"];\n",
            join.worker, join.index, join.index
        ));
    }
    out.push_str("}\n");
    Ok(out)
}

/// Builds a decomposition directly from fragment data, for worked cases and
/// tests that do not go through the engine.
pub fn decomposition_from_parts(
    fragments: Vec<(u64, Vec<(u32, usize, u64)>)>,
    joins: Vec<(usize, usize)>,
) -> FragmentDecomposition {
    let fragments: Vec<Fragment> = fragments
        .into_iter()
        .enumerate()
        .map(|(i, (steps, marks))| Fragment {
            index: i + 1,
            steps,
            fork_marks: marks
                .into_iter()
                .map(|(sub_query_id, worker, at)| ForkMark {
                    sub_query_id,
                    worker,
                    steps_to_fork_close: at,
                })
                .collect(),
        })
        .collect();
    let joins: Vec<JoinSpec> = joins
        .into_iter()
        .enumerate()
        .map(|(i, (fragment, worker))| JoinSpec {
            index: i + 1,
            fragment,
            sub_query_id: 0,
            worker,
        })
        .collect();
    let n_joins = joins.len();
    FragmentDecomposition {
        fragments,
        joins,
        n_joins,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_dp_case_waiting_join() {
        // f1=10 with fork close at step 4, worker runs 20 steps, f2=6
        let decomp = decomposition_from_parts(
            vec![(10, vec![(1, 0, 4)]), (6, vec![])],
            vec![(1, 0)],
        );
        let steps: WorkerSteps = [(0usize, 20u64)].into_iter().collect();
        let result = critical_path_latency(&decomp, &steps).unwrap();
        assert_eq!(result.completion, vec![0, 24, 30]);
        assert_eq!(result.total, 30);
        assert_eq!(result.per_join_wait, vec![14]);
    }

    #[test]
    fn worked_dp_case_no_wait() {
        let decomp = decomposition_from_parts(
            vec![(10, vec![(1, 0, 4)]), (6, vec![])],
            vec![(1, 0)],
        );
        let steps: WorkerSteps = [(0usize, 3u64)].into_iter().collect();
        let result = critical_path_latency(&decomp, &steps).unwrap();
        assert_eq!(result.completion, vec![0, 10, 16]);
        assert_eq!(result.total, 16);
        assert_eq!(result.per_join_wait, vec![0]);
    }

    #[test]
    fn sequential_case() {
        let decomp = decomposition_from_parts(vec![(30, vec![])], vec![]);
        let result = critical_path_latency(&decomp, &WorkerSteps::new()).unwrap();
        assert_eq!(result.total, 30);
        assert_eq!(result.completion, vec![0, 30]);
    }

    #[test]
    fn missing_worker_steps_is_an_error() {
        let decomp = decomposition_from_parts(vec![(10, vec![(1, 0, 4)]), (6, vec![])], vec![(1, 0)]);
        assert!(matches!(
            critical_path_latency(&decomp, &WorkerSteps::new()),
            Err(MetricsError::MissingWorkerSteps { worker: 0 })
        ));
    }

    #[test]
    fn concurrency_ratio_examples() {
        let sequential = ActivityTimeline {
            counts: vec![1; 30],
        };
        let (eta, rho) = concurrency_ratio(&sequential, 2);
        assert_eq!(eta, 1.0);
        assert_eq!(rho, 0.5);

        let worked = ActivityTimeline {
            counts: [vec![1; 4], vec![2; 6], vec![1; 14], vec![1; 6]].concat(),
        };
        assert_eq!(worked.active_sum(), 36);
        let (eta, rho) = concurrency_ratio(&worked, 2);
        assert!((eta - 1.2).abs() < 1e-12);
        assert!((rho - 0.6).abs() < 1e-12);

        let saturated = ActivityTimeline {
            counts: vec![4; 10],
        };
        let (_, rho) = concurrency_ratio(&saturated, 4);
        assert_eq!(rho, 1.0);
    }
}
