//! End-to-end episode execution against scripted and mock backends: clock
//! stamps, activity timelines, budget enforcement, replay, and the latency
//! oracles all checked on constructed and randomized episodes.

use std::collections::HashMap;

use asyncthink::backends::{
    AnswerGen, MockBackend, MockPolicy, PromptSet, ScriptedBackend, WorkerScriptKey,
};
use asyncthink::engine::{
    activity_timeline, replay, run_episode, EngineError, EpisodeConfig, EpisodeTrace, WorkerState,
};
use asyncthink::metrics::{
    concurrency_ratio, critical_path_latency, decompose, simulate_latency, trace_worker_steps,
};
use asyncthink::protocol::{EventKind, FormatErrorClass, TagSyntax};

fn config(capacity: u32) -> EpisodeConfig {
    EpisodeConfig {
        capacity,
        worker_budget: 256,
        organizer_segment_budget: 256,
        max_total_steps: 1024,
        ..Default::default()
    }
}

fn scripted(segments: Vec<&str>, workers: Vec<((usize, u32), &str)>) -> ScriptedBackend {
    let map: HashMap<WorkerScriptKey, String> = workers
        .into_iter()
        .map(|(k, v)| (k, v.to_string()))
        .collect();
    ScriptedBackend::new(
        TagSyntax::default(),
        segments.into_iter().map(|s| s.to_string()).collect(),
        map,
    )
}

/// The worked fork/join script: fragment one is 10 steps with the fork
/// closing at step 4, fragment two is 6 steps.
fn worked_backend(worker_text: &str) -> ScriptedBackend {
    scripted(
        vec![
            "w1 <FORK-1>q</FORK-1> t5 t6 t7 t8 t9 <JOIN-1>",
            "<ANSWER>a1 a2 a3 a4</ANSWER>",
        ],
        vec![((0, 1), worker_text)],
    )
}

const WORKER_20: &str =
    "t1 t2 t3 t4 t5 t6 t7 t8 t9 t10 t11 t12 t13 t14 t15 t16 t17 <RETURN>ok</RETURN>";
const WORKER_3: &str = "<RETURN>ok</RETURN>";

#[test]
fn sequential_episode_has_no_workers_and_sequential_latency() {
    let backend = scripted(vec!["think a bit more <ANSWER>7</ANSWER>"], vec![]);
    let trace = run_episode(&backend, "q", &config(2), &PromptSet::default()).unwrap();
    assert_eq!(trace.workers.len(), 0);
    assert_eq!(trace.answer.as_deref(), Some("7"));
    assert!(trace.error.is_none());
    // "think a bit more " = 4 pieces, <ANSWER> = 1, "7" = 1, </ANSWER> = 1
    assert_eq!(trace.total_steps(), 7);
    let decomp = decompose(&trace).unwrap();
    let dp = critical_path_latency(&decomp, &trace_worker_steps(&trace)).unwrap();
    assert_eq!(dp.total, 7);
    assert_eq!(simulate_latency(&trace).unwrap(), 7);
    // every step has exactly the organizer active
    assert_eq!(trace.activity.counts, vec![1; 7]);
    let (eta, rho) = concurrency_ratio(&trace.activity, 2);
    assert_eq!(eta, 1.0);
    assert_eq!(rho, 0.5);
}

#[test]
fn worked_case_waiting_join() {
    let backend = worked_backend(WORKER_20);
    let trace = run_episode(&backend, "q", &config(2), &PromptSet::default()).unwrap();

    let slot = &trace.workers[0];
    assert_eq!(slot.start_step, 5, "fork closes at step 4, worker starts at 5");
    assert_eq!(slot.end_step, 24, "20 steps: 5..=24");
    assert_eq!(slot.steps(), 20);
    assert_eq!(slot.state, WorkerState::Finished);
    assert_eq!(slot.return_payload, "ok");
    assert_eq!(slot.sub_query, "q");

    // merge completes after worker end step 24; answer spans 25..=30
    let join = trace
        .organizer
        .iter()
        .find(|e| e.kind == EventKind::JoinRequest)
        .unwrap();
    assert_eq!(join.step, 10);
    let merge = trace
        .organizer
        .iter()
        .find(|e| e.kind == EventKind::JoinMergeEnd)
        .unwrap();
    assert_eq!(merge.step, 24);
    assert_eq!(trace.total_steps(), 30);
    assert_eq!(trace.answer.as_deref(), Some("a1 a2 a3 a4"));

    // organizer context between the join request and merge end is exactly
    // the payload plus the join close tag
    let b = &trace.bindings[0];
    let spliced: String = trace.organizer[b.join_event + 1..=b.merge_end_event]
        .iter()
        .map(|e| e.text.as_str())
        .collect();
    assert_eq!(spliced, "ok</JOIN-1>");

    // step-wise counting oracle for the activity timeline
    let expected = [vec![1u32; 4], vec![2; 6], vec![1; 14], vec![1; 6]].concat();
    assert_eq!(trace.activity.counts, expected);
    assert_eq!(trace.activity.active_sum(), 36);
    assert_eq!(activity_timeline(&trace), trace.activity);
    let (eta, rho) = concurrency_ratio(&trace.activity, 2);
    assert!((eta - 1.2).abs() < 1e-12);
    assert!((rho - 0.6).abs() < 1e-12);

    // DP and simulation agree with the engine clock
    let decomp = decompose(&trace).unwrap();
    assert_eq!(decomp.fragments[0].steps, 10);
    assert_eq!(decomp.fragments[0].fork_marks[0].steps_to_fork_close, 4);
    assert_eq!(decomp.fragments[1].steps, 6);
    let dp = critical_path_latency(&decomp, &trace_worker_steps(&trace)).unwrap();
    assert_eq!(dp.total, 30);
    assert_eq!(dp.completion, vec![0, 24, 30]);
    assert_eq!(simulate_latency(&trace).unwrap(), 30);
}

#[test]
fn worked_case_fast_worker_never_waits() {
    let backend = worked_backend(WORKER_3);
    let trace = run_episode(&backend, "q", &config(2), &PromptSet::default()).unwrap();
    assert_eq!(trace.workers[0].steps(), 3);
    assert_eq!(trace.total_steps(), 16);
    let decomp = decompose(&trace).unwrap();
    let dp = critical_path_latency(&decomp, &trace_worker_steps(&trace)).unwrap();
    assert_eq!(dp.total, 16);
    assert_eq!(dp.per_join_wait, vec![0]);
    assert_eq!(simulate_latency(&trace).unwrap(), 16);
}

#[test]
fn parallel_thinking_special_case() {
    // organizer re-forks the original query to c-1 workers, then joins each
    let backend = scripted(
        vec![
            "plan <FORK-1>q</FORK-1> <FORK-2>q</FORK-2> <FORK-3>q</FORK-3> <JOIN-1>",
            "<JOIN-2>",
            "<JOIN-3>",
            "<ANSWER>vote</ANSWER>",
        ],
        vec![
            ((0, 1), "a b c d e f g h i <RETURN>r1</RETURN>"),
            ((1, 2), "a b c d e <RETURN>r2</RETURN>"),
            ((2, 3), "a <RETURN>r3</RETURN>"),
        ],
    );
    let trace = run_episode(&backend, "q", &config(4), &PromptSet::default()).unwrap();
    assert!(trace.error.is_none());
    assert_eq!(trace.workers.len(), 3);
    assert_eq!(trace.n_joins(), 3);
    // all three workers overlap while the organizer forks them
    let max_active = trace.activity.counts.iter().copied().max().unwrap();
    assert_eq!(max_active, 4);
    let decomp = decompose(&trace).unwrap();
    let dp = critical_path_latency(&decomp, &trace_worker_steps(&trace)).unwrap();
    assert_eq!(dp.total, simulate_latency(&trace).unwrap());
    assert_eq!(dp.total, trace.total_steps());
}

#[test]
fn join_on_reused_id_binds_to_the_new_worker() {
    let backend = scripted(
        vec![
            "x <FORK-1>first</FORK-1> <JOIN-1>",
            "y <FORK-1>second</FORK-1> <JOIN-1>",
            "<ANSWER>done</ANSWER>",
        ],
        vec![
            ((0, 1), "<RETURN>alpha</RETURN>"),
            ((1, 1), "w1 w2 <RETURN>beta</RETURN>"),
        ],
    );
    let trace = run_episode(&backend, "q", &config(2), &PromptSet::default()).unwrap();
    assert!(trace.error.is_none());
    assert_eq!(trace.workers.len(), 2);
    assert_eq!(trace.bindings[0].worker, 0);
    assert_eq!(trace.bindings[1].worker, 1);
    assert_eq!(trace.workers[0].return_payload, "alpha");
    assert_eq!(trace.workers[1].return_payload, "beta");
    assert_eq!(trace.bindings[1].fragment, 2);
    let decomp = decompose(&trace).unwrap();
    let dp = critical_path_latency(&decomp, &trace_worker_steps(&trace)).unwrap();
    assert_eq!(dp.total, simulate_latency(&trace).unwrap());
}

#[test]
fn worker_budget_truncates_and_join_merges_empty_payload() {
    let mut cfg = config(2);
    cfg.worker_budget = 10;
    let long_worker = (1..=50)
        .map(|i| format!("t{}", i))
        .collect::<Vec<_>>()
        .join(" ");
    let backend = scripted(
        vec!["go <FORK-1>q</FORK-1> <JOIN-1>", "<ANSWER>x</ANSWER>"],
        vec![((0, 1), long_worker.as_str())],
    );
    let trace = run_episode(&backend, "q", &cfg, &PromptSet::default()).unwrap();
    let slot = &trace.workers[0];
    assert_eq!(slot.state, WorkerState::Truncated);
    assert_eq!(slot.steps(), 10, "never exceeds worker_budget");
    assert_eq!(slot.return_payload, "");
    // the merge splices only the join close tag
    let b = &trace.bindings[0];
    let spliced: String = trace.organizer[b.join_event + 1..=b.merge_end_event]
        .iter()
        .map(|e| e.text.as_str())
        .collect();
    assert_eq!(spliced, "</JOIN-1>");
    assert!(trace.error.is_none());
}

#[test]
fn worker_without_return_block_is_truncated_with_empty_payload() {
    let backend = scripted(
        vec!["go <FORK-1>q</FORK-1> <JOIN-1>", "<ANSWER>x</ANSWER>"],
        vec![((0, 1), "thoughts but no return block")],
    );
    let trace = run_episode(&backend, "q", &config(2), &PromptSet::default()).unwrap();
    assert_eq!(trace.workers[0].state, WorkerState::Truncated);
    assert_eq!(trace.workers[0].return_payload, "");
}

#[test]
fn organizer_segment_budget_exhaustion_is_missing_answer() {
    let mut cfg = config(2);
    cfg.organizer_segment_budget = 5;
    cfg.max_total_steps = 100;
    let text = "a b c d e f g h i j";
    let backend = scripted(vec![text], vec![]);
    let trace = run_episode(&backend, "q", &cfg, &PromptSet::default()).unwrap();
    assert_eq!(trace.total_steps(), 5, "never exceeds the segment budget");
    assert_eq!(
        trace.error.as_ref().map(|e| e.class),
        Some(FormatErrorClass::MissingFinalAnswer)
    );
    assert_eq!(trace.organizer_text(), "a b c d e ");
}

#[test]
fn max_total_steps_caps_the_clock() {
    let mut cfg = config(2);
    cfg.organizer_segment_budget = 8;
    cfg.max_total_steps = 12;
    let backend = scripted(
        vec![
            "a b c <FORK-1>q</FORK-1> e f g <JOIN-1>",
            "h i j k l m n o p q r s",
        ],
        vec![((0, 1), "w1 w2 w3 w4 w5 w6 w7 w8 <RETURN>r</RETURN>")],
    );
    let trace = run_episode(&backend, "q", &cfg, &PromptSet::default()).unwrap();
    assert!(trace.total_steps() <= 12);
    assert_eq!(
        trace.error.as_ref().map(|e| e.class),
        Some(FormatErrorClass::MissingFinalAnswer)
    );
}

#[test]
fn format_error_episodes_abort_with_the_right_class() {
    for class in [
        FormatErrorClass::DuplicateSubQueryIndex,
        FormatErrorClass::AgentPoolOverflow,
        FormatErrorClass::JoinNonexistent,
        FormatErrorClass::MissingFinalAnswer,
    ] {
        let policy = MockPolicy {
            error_injection: Some(class),
            ..Default::default()
        };
        let backend = MockBackend::new(policy, 5, TagSyntax::default(), 2);
        let trace = run_episode(&backend, "query", &config(2), &PromptSet::default()).unwrap();
        assert_eq!(
            trace.error.as_ref().map(|e| e.class),
            Some(class),
            "class {:?}",
            class
        );
        assert!(trace.answer.is_none());
    }
}

#[test]
fn trace_jsonl_round_trip_is_bit_exact() {
    let backend = worked_backend(WORKER_20);
    let trace = run_episode(&backend, "q", &config(2), &PromptSet::default()).unwrap();
    let line = trace.to_jsonl_line();
    let parsed = EpisodeTrace::from_jsonl_line(&line).unwrap();
    assert_eq!(parsed, trace);
    assert_eq!(parsed.to_jsonl_line(), line);
}

#[test]
fn replay_reproduces_scripted_and_mock_episodes() {
    let prompts = PromptSet::default();
    let backend = worked_backend(WORKER_20);
    let trace = run_episode(&backend, "q", &config(2), &prompts).unwrap();
    let replayed = replay(&trace, &prompts).unwrap();
    assert_eq!(replayed, trace);

    for seed in 0..20u64 {
        let backend = MockBackend::new(MockPolicy::default(), seed, TagSyntax::default(), 4);
        let trace = run_episode(&backend, "query", &config(4), &prompts).unwrap();
        let replayed = replay(&trace, &prompts).unwrap();
        assert!(replayed.same_episode(&trace), "seed {}", seed);
    }
}

#[test]
fn replay_detects_hand_edited_traces() {
    let backend = worked_backend(WORKER_20);
    let mut trace = run_episode(&backend, "q", &config(2), &PromptSet::default()).unwrap();
    // shift the worker's recorded window by one step
    trace.workers[0].start_step += 1;
    trace.workers[0].end_step += 1;
    for ev in &mut trace.workers[0].events {
        ev.step += 1;
    }
    match replay(&trace, &PromptSet::default()) {
        Err(EngineError::Replay(d)) => {
            assert!(d.first_step.is_some() || !d.description.is_empty());
        }
        other => panic!("expected divergence, got {:?}", other.map(|t| t.total_steps())),
    }
}

#[test]
fn mock_episodes_agree_with_both_latency_routes() {
    let prompts = PromptSet::default();
    for capacity in [2u32, 4] {
        for seed in 0..50u64 {
            let policy = MockPolicy {
                max_forks: 6,
                ..Default::default()
            };
            let backend = MockBackend::new(policy, seed, TagSyntax::default(), capacity);
            let trace = run_episode(&backend, "query", &config(capacity), &prompts).unwrap();
            assert!(trace.error.is_none(), "seed {} cap {}", seed, capacity);
            let decomp = decompose(&trace).unwrap();
            let dp = critical_path_latency(&decomp, &trace_worker_steps(&trace)).unwrap();
            let sim = simulate_latency(&trace).unwrap();
            assert_eq!(dp.total, sim, "seed {} cap {}", seed, capacity);
            assert_eq!(dp.total, trace.total_steps(), "seed {} cap {}", seed, capacity);
            // fragment step counts sum to the organizer's decoded steps
            let decoded: u64 = trace
                .organizer
                .iter()
                .enumerate()
                .filter(|(i, _)| !trace.is_spliced(*i))
                .map(|(_, e)| trace.config.weigher.weigh(&e.text))
                .sum();
            let fragment_sum: u64 = decomp.fragments.iter().map(|f| f.steps).sum();
            assert_eq!(fragment_sum, decoded);
            // capacity safety on the recomputed timeline
            let timeline = activity_timeline(&trace);
            assert_eq!(timeline, trace.activity);
            assert!(timeline.counts.iter().all(|&c| c >= 1 && c <= capacity));
        }
    }
}

#[test]
fn empty_query_is_a_config_error() {
    let backend = scripted(vec!["<ANSWER>x</ANSWER>"], vec![]);
    assert!(matches!(
        run_episode(&backend, "", &config(2), &PromptSet::default()),
        Err(EngineError::Config(_))
    ));
}

#[test]
fn backend_failure_keeps_partial_trace() {
    // script has no segment for the resume after the join
    let backend = scripted(
        vec!["go <FORK-1>q</FORK-1> <JOIN-1>"],
        vec![((0, 1), "<RETURN>r</RETURN>")],
    );
    match run_episode(&backend, "q", &config(2), &PromptSet::default()) {
        Err(EngineError::Backend { partial, .. }) => {
            assert_eq!(partial.workers.len(), 1);
            assert!(partial.answer.is_none());
            assert!(partial
                .organizer
                .iter()
                .any(|e| e.kind == EventKind::JoinMergeEnd));
        }
        other => panic!(
            "expected backend failure, got {:?}",
            other.map(|t| t.total_steps())
        ),
    }
}
