//! Python bindings for the asyncthink engine.
//!
//! Exposes episode execution against the seeded mock backend, trace
//! serialization and replay, the latency and concurrency metrics, the
//! rule-based rewards with loss masks, structure sampling, and the
//! multi-solution countdown task.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use asyncthink::backends::{AnswerGen, MockBackend, MockPolicy, PromptSet};
use asyncthink::engine::{self, EpisodeConfig, EpisodeTrace};
use asyncthink::metrics::{
    concurrency_ratio, critical_path_latency, decompose, simulate_latency, trace_worker_steps,
};
use asyncthink::protocol::{
    render_structure, sample_structure, scan_text as scan, validate_trace, Role, TagSyntax,
};
use asyncthink::rewards::{self, token_masks, RewardConfig};
use asyncthink::tasks::{gen_countdown, mcd_accuracy, render_query, CountdownInstance, GenParams};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_role(role: &str) -> PyResult<Role> {
    match role {
        "organizer" => Ok(Role::Organizer),
        "worker" => Ok(Role::Worker),
        other => Err(value_err(format!(
            "role {:?} is not organizer or worker",
            other
        ))),
    }
}

fn event_dict<'py>(
    py: Python<'py>,
    event: &asyncthink::protocol::ProtocolEvent,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let kind = serde_json::to_value(event.kind).expect("kind serializes");
    d.set_item("kind", kind.as_str().expect("kind string"))?;
    d.set_item("id", event.id.map(|i| i.get()))?;
    d.set_item("text", &event.text)?;
    d.set_item("position", event.position)?;
    Ok(d)
}

/// Scan a complete text with the default tag grammar.
#[pyfunction]
#[pyo3(signature = (text, role = "organizer"))]
fn scan_text<'py>(py: Python<'py>, text: &str, role: &str) -> PyResult<Bound<'py, PyList>> {
    let events = scan(text, parse_role(role)?, &TagSyntax::default());
    let list = PyList::empty(py);
    for event in &events {
        list.append(event_dict(py, event)?)?;
    }
    Ok(list)
}

/// Validate an organizer text; returns None or a format-error dict.
#[pyfunction]
fn validate_text<'py>(
    py: Python<'py>,
    text: &str,
    capacity: u32,
) -> PyResult<Option<Bound<'py, PyDict>>> {
    let events = scan(text, Role::Organizer, &TagSyntax::default());
    match validate_trace(&events, capacity) {
        Ok(()) => Ok(None),
        Err(err) => {
            let d = PyDict::new(py);
            d.set_item("class", err.class.to_string())?;
            d.set_item("position", err.position)?;
            d.set_item("detail", err.detail)?;
            Ok(Some(d))
        }
    }
}

/// Sample a uniformly random valid organizer action structure.
#[pyfunction]
#[pyo3(signature = (capacity, n_forks, seed = 0))]
fn sample_action_structure<'py>(
    py: Python<'py>,
    capacity: u32,
    n_forks: u32,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let syntax = TagSyntax::default();
    let structure = sample_structure(capacity, n_forks, seed, syntax.max_id).map_err(value_err)?;
    let d = PyDict::new(py);
    let actions: Vec<String> = structure.actions.iter().map(|a| a.to_string()).collect();
    d.set_item("actions", actions)?;
    d.set_item("rendered", render_structure(&structure, &syntax))?;
    Ok(d)
}

/// Eq.-style concurrency reward min(rho, tau) / tau.
#[pyfunction]
#[pyo3(signature = (rho, tau = 0.5))]
fn concurrency_reward(rho: f64, tau: f64) -> f64 {
    rewards::concurrency_reward(
        rho,
        &RewardConfig {
            tau,
            ..Default::default()
        },
    )
}

/// Combined reward: the format-error constant dominates, otherwise
/// accuracy + lambda * concurrency.
#[pyfunction]
#[pyo3(signature = (accuracy, concurrency, has_format_error, lam = 0.5, r_fe = -1.0))]
fn combined_reward(
    accuracy: f64,
    concurrency: f64,
    has_format_error: bool,
    lam: f64,
    r_fe: f64,
) -> f64 {
    rewards::combine(
        accuracy,
        concurrency,
        has_format_error,
        &RewardConfig {
            lambda: lam,
            r_fe,
            ..Default::default()
        },
    )
}

/// Group-relative advantages with std normalization and an epsilon floor.
#[pyfunction]
#[pyo3(signature = (rewards, epsilon = 1e-6))]
fn group_advantages(rewards: Vec<f64>, epsilon: f64) -> PyResult<Vec<f64>> {
    rewards::group_advantages(&rewards, epsilon).map_err(value_err)
}

/// Binary accuracy with exact-rational normalization.
#[pyfunction]
fn accuracy_binary(predicted: &str, gold: &str) -> f64 {
    rewards::accuracy_binary(predicted, gold)
}

/// A multi-solution countdown instance.
#[pyclass(name = "CountdownTask")]
#[derive(Clone)]
struct PyCountdownTask {
    inner: CountdownInstance,
}

#[pymethods]
impl PyCountdownTask {
    /// Generate a certified instance (at least n_s distinct solutions).
    #[staticmethod]
    #[pyo3(signature = (seed = 0, set_size = 6, n_s = 4, target_min = 1, target_max = 1000))]
    fn generate(
        seed: u64,
        set_size: usize,
        n_s: usize,
        target_min: i64,
        target_max: i64,
    ) -> PyResult<Self> {
        let params = GenParams {
            set_size,
            n_s,
            target_min,
            target_max,
            ..Default::default()
        };
        let inner = gen_countdown(seed, &params).map_err(value_err)?;
        Ok(PyCountdownTask { inner })
    }

    #[staticmethod]
    fn from_json(line: &str) -> PyResult<Self> {
        let inner: CountdownInstance = serde_json::from_str(line).map_err(value_err)?;
        Ok(PyCountdownTask { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("instance serializes")
    }

    #[getter]
    fn target(&self) -> i64 {
        self.inner.target
    }

    #[getter]
    fn numbers(&self) -> Vec<i64> {
        self.inner.numbers.clone()
    }

    #[getter]
    fn n_s(&self) -> usize {
        self.inner.n_s
    }

    #[getter]
    fn certified_solution_count(&self) -> usize {
        self.inner.certified_solution_count
    }

    /// The canonical query text for this instance.
    fn query_text(&self) -> String {
        render_query(&self.inner)
    }

    /// Score an answer text: (n_c, R_A).
    fn accuracy(&self, answer_text: &str) -> (usize, f64) {
        mcd_accuracy(answer_text, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "CountdownTask(target={}, numbers={:?}, n_s={})",
            self.inner.target, self.inner.numbers, self.inner.n_s
        )
    }
}

/// One recorded episode.
#[pyclass(name = "Trace")]
struct PyTrace {
    inner: EpisodeTrace,
}

#[pymethods]
impl PyTrace {
    /// Run one episode against the seeded mock backend.
    #[staticmethod]
    #[pyo3(signature = (query, seed = 0, capacity = 2, fork_prob = 0.6, max_forks = 4,
                        worker_budget = 2048, segment_budget = 2048, max_steps = 8192,
                        answer = "solve", error_inject = None))]
    #[allow(clippy::too_many_arguments)]
    fn run_mock(
        query: &str,
        seed: u64,
        capacity: u32,
        fork_prob: f64,
        max_forks: u32,
        worker_budget: u64,
        segment_budget: u64,
        max_steps: u64,
        answer: &str,
        error_inject: Option<&str>,
    ) -> PyResult<Self> {
        let answer = if answer == "solve" {
            AnswerGen::SolveCountdown { drop_prob: 0.25 }
        } else if let Some(p) = answer.strip_prefix("solve:") {
            AnswerGen::SolveCountdown {
                drop_prob: p.parse().map_err(value_err)?,
            }
        } else if let Some(text) = answer.strip_prefix("fixed:") {
            AnswerGen::Fixed(text.to_string())
        } else {
            return Err(value_err("answer must be solve, solve:P, or fixed:TEXT"));
        };
        let error_injection = match error_inject {
            None => None,
            Some("duplicate") => {
                Some(asyncthink::FormatErrorClass::DuplicateSubQueryIndex)
            }
            Some("overflow") => Some(asyncthink::FormatErrorClass::AgentPoolOverflow),
            Some("join-nonexistent") => Some(asyncthink::FormatErrorClass::JoinNonexistent),
            Some("missing-answer") => Some(asyncthink::FormatErrorClass::MissingFinalAnswer),
            Some(other) => return Err(value_err(format!("unknown error class {:?}", other))),
        };
        let config = EpisodeConfig {
            capacity,
            worker_budget,
            organizer_segment_budget: segment_budget,
            max_total_steps: max_steps,
            seed,
            ..Default::default()
        };
        let policy = MockPolicy {
            fork_prob,
            max_forks,
            answer,
            error_injection,
            ..Default::default()
        };
        let backend = MockBackend::new(policy, seed, config.syntax.clone(), capacity);
        let inner = engine::run_episode(&backend, query, &config, &PromptSet::default())
            .map_err(value_err)?;
        Ok(PyTrace { inner })
    }

    #[staticmethod]
    fn from_json(line: &str) -> PyResult<Self> {
        let inner = EpisodeTrace::from_jsonl_line(line).map_err(value_err)?;
        Ok(PyTrace { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_jsonl_line()
    }

    /// Re-execute from the recorded outputs; raises on any divergence.
    fn replay(&self) -> PyResult<Self> {
        let inner = engine::replay(&self.inner, &PromptSet::default()).map_err(value_err)?;
        Ok(PyTrace { inner })
    }

    #[getter]
    fn query(&self) -> String {
        self.inner.query.clone()
    }

    #[getter]
    fn answer(&self) -> Option<String> {
        self.inner.answer.clone()
    }

    fn format_error<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyDict>>> {
        match &self.inner.error {
            None => Ok(None),
            Some(err) => {
                let d = PyDict::new(py);
                d.set_item("class", err.class.to_string())?;
                d.set_item("position", err.position)?;
                d.set_item("detail", &err.detail)?;
                Ok(Some(d))
            }
        }
    }

    fn n_forks(&self) -> usize {
        self.inner.n_forks()
    }

    fn n_joins(&self) -> usize {
        self.inner.n_joins()
    }

    fn total_steps(&self) -> u64 {
        self.inner.total_steps()
    }

    /// Critical-path latency from the fragment dynamic program.
    fn critical_path(&self) -> PyResult<u64> {
        let decomp = decompose(&self.inner).map_err(value_err)?;
        let result =
            critical_path_latency(&decomp, &trace_worker_steps(&self.inner)).map_err(value_err)?;
        Ok(result.total)
    }

    /// Critical-path latency from the independent event simulation.
    fn simulate(&self) -> PyResult<u64> {
        simulate_latency(&self.inner).map_err(value_err)
    }

    /// (eta, rho): mean active agents per step and its normalized form.
    fn concurrency(&self) -> (f64, f64) {
        concurrency_ratio(&self.inner.activity, self.inner.config.capacity)
    }

    /// Per-step active-agent counts.
    fn activity(&self) -> Vec<u32> {
        self.inner.activity.counts.clone()
    }

    /// The organizer's merged context tail.
    fn organizer_text(&self) -> String {
        self.inner.organizer_text()
    }

    /// Loss-mask spans: {"organizer_text", "spans": [(start, end, include)],
    /// "workers": [{"sub_query_id", "text"}]}.
    fn masks<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let masks = token_masks(&self.inner).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("organizer_text", &masks.organizer_text)?;
        let spans: Vec<(usize, usize, bool)> = masks
            .organizer_spans
            .iter()
            .map(|s| (s.start, s.end, s.include))
            .collect();
        d.set_item("spans", spans)?;
        let workers = PyList::empty(py);
        for worker in &masks.workers {
            let w = PyDict::new(py);
            w.set_item("sub_query_id", worker.sub_query_id)?;
            w.set_item("text", &worker.text)?;
            workers.append(w)?;
        }
        d.set_item("workers", workers)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Trace(steps={}, forks={}, joins={}, answered={})",
            self.inner.total_steps(),
            self.inner.n_forks(),
            self.inner.n_joins(),
            self.inner.answer.is_some()
        )
    }
}

#[pymodule]
fn asyncthink_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrace>()?;
    m.add_class::<PyCountdownTask>()?;
    m.add_function(wrap_pyfunction!(scan_text, m)?)?;
    m.add_function(wrap_pyfunction!(validate_text, m)?)?;
    m.add_function(wrap_pyfunction!(sample_action_structure, m)?)?;
    m.add_function(wrap_pyfunction!(concurrency_reward, m)?)?;
    m.add_function(wrap_pyfunction!(combined_reward, m)?)?;
    m.add_function(wrap_pyfunction!(group_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy_binary, m)?)?;
    Ok(())
}
