//! Run manifest: key-value config file plus flag overrides.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use asyncthink::backends::{
    AnswerGen, HttpBackend, HttpConfig, MockBackend, MockPolicy, ScriptedBackend, TextBackend,
};
use asyncthink::engine::{EpisodeConfig, EpisodeTrace};
use asyncthink::protocol::{FormatErrorClass, TagSyntax};
use asyncthink::rewards::RewardConfig;
use asyncthink::tasks::CountdownInstance;

use crate::CliError;

/// Environment variable holding the HTTP auth token. Tokens are never flags.
pub const TOKEN_ENV: &str = "ASYNCTHINK_API_TOKEN";

/// Everything one `run` needs.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub dataset: String,
    pub out: String,
    pub backend: BackendSpec,
    pub episode: EpisodeConfig,
    pub rewards: RewardConfig,
    /// Episodes per query.
    pub group_size: u64,
    /// Instances to take from the dataset (all when absent).
    pub limit: Option<usize>,
    pub seed: u64,
    pub jobs: usize,
    pub fork_prob: f64,
    pub max_forks: u32,
    pub answer: AnswerGen,
    pub error_inject: Option<FormatErrorClass>,
    pub model: String,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            dataset: String::new(),
            out: String::new(),
            backend: BackendSpec::Mock,
            episode: EpisodeConfig::default(),
            rewards: RewardConfig::default(),
            group_size: 1,
            limit: None,
            seed: 0,
            jobs: 1,
            fork_prob: 0.6,
            max_forks: 4,
            answer: AnswerGen::SolveCountdown { drop_prob: 0.25 },
            error_inject: None,
            model: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Mock,
    Scripted(String),
    Http(String),
}

pub fn parse_backend_spec(text: &str) -> Result<BackendSpec, CliError> {
    if text == "mock" {
        return Ok(BackendSpec::Mock);
    }
    if let Some(path) = text.strip_prefix("scripted:") {
        return Ok(BackendSpec::Scripted(path.to_string()));
    }
    if let Some(url) = text.strip_prefix("http:") {
        return Ok(BackendSpec::Http(format!("http:{}", url)));
    }
    if let Some(url) = text.strip_prefix("https:") {
        return Ok(BackendSpec::Http(format!("https:{}", url)));
    }
    Err(CliError::Config(format!(
        "backend {:?} is not mock, scripted:PATH, or an http(s) URL",
        text
    )))
}

pub fn parse_error_class(text: &str) -> Result<FormatErrorClass, CliError> {
    match text {
        "duplicate" | "duplicate_sub_query_index" => Ok(FormatErrorClass::DuplicateSubQueryIndex),
        "overflow" | "agent_pool_overflow" => Ok(FormatErrorClass::AgentPoolOverflow),
        "join-nonexistent" | "join_nonexistent" => Ok(FormatErrorClass::JoinNonexistent),
        "missing-answer" | "missing_final_answer" => Ok(FormatErrorClass::MissingFinalAnswer),
        other => Err(CliError::Config(format!(
            "unknown error class {:?} (duplicate, overflow, join-nonexistent, missing-answer)",
            other
        ))),
    }
}

pub fn parse_answer_gen(text: &str) -> Result<AnswerGen, CliError> {
    if text == "solve" {
        return Ok(AnswerGen::SolveCountdown { drop_prob: 0.25 });
    }
    if let Some(p) = text.strip_prefix("solve:") {
        let drop_prob: f64 = p
            .parse()
            .map_err(|_| CliError::Config(format!("bad drop probability {:?}", p)))?;
        if !(0.0..=1.0).contains(&drop_prob) {
            return Err(CliError::Config("drop probability outside [0, 1]".into()));
        }
        return Ok(AnswerGen::SolveCountdown { drop_prob });
    }
    if let Some(fixed) = text.strip_prefix("fixed:") {
        return Ok(AnswerGen::Fixed(fixed.to_string()));
    }
    Err(CliError::Config(format!(
        "answer generator {:?} is not solve, solve:P, or fixed:TEXT",
        text
    )))
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn read_kv_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {}", path.display(), e)))?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!(
                "{}:{}: expected key = value",
                path.display(),
                lineno + 1
            ))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

impl RunManifest {
    /// Applies config-file values; flags are applied after this and win.
    pub fn apply_kv(&mut self, map: &BTreeMap<String, String>) -> Result<(), CliError> {
        let bad = |key: &str, value: &str| {
            CliError::Config(format!("bad value {:?} for key {:?}", value, key))
        };
        for (key, value) in map {
            match key.as_str() {
                "dataset" => self.dataset = value.clone(),
                "out" => self.out = value.clone(),
                "backend" => self.backend = parse_backend_spec(value)?,
                "capacity" => {
                    self.episode.capacity = value.parse().map_err(|_| bad(key, value))?
                }
                "worker_budget" => {
                    self.episode.worker_budget = value.parse().map_err(|_| bad(key, value))?
                }
                "segment_budget" => {
                    self.episode.organizer_segment_budget =
                        value.parse().map_err(|_| bad(key, value))?
                }
                "max_steps" => {
                    self.episode.max_total_steps = value.parse().map_err(|_| bad(key, value))?
                }
                "syntax_file" => {
                    self.episode.syntax = TagSyntax::from_kv_file(Path::new(value))
                        .map_err(|e| CliError::Config(e.to_string()))?
                }
                "group_size" => self.group_size = value.parse().map_err(|_| bad(key, value))?,
                "limit" => self.limit = Some(value.parse().map_err(|_| bad(key, value))?),
                "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
                "jobs" => self.jobs = value.parse().map_err(|_| bad(key, value))?,
                "fork_prob" => self.fork_prob = value.parse().map_err(|_| bad(key, value))?,
                "max_forks" => self.max_forks = value.parse().map_err(|_| bad(key, value))?,
                "answer" => self.answer = parse_answer_gen(value)?,
                "error_inject" => self.error_inject = Some(parse_error_class(value)?),
                "model" => self.model = value.clone(),
                "tau" => self.rewards.tau = value.parse().map_err(|_| bad(key, value))?,
                "lambda" => self.rewards.lambda = value.parse().map_err(|_| bad(key, value))?,
                "r_fe" => self.rewards.r_fe = value.parse().map_err(|_| bad(key, value))?,
                "epsilon" => self.rewards.epsilon = value.parse().map_err(|_| bad(key, value))?,
                other => {
                    return Err(CliError::Config(format!("unknown manifest key {:?}", other)))
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.dataset.is_empty() {
            return Err(CliError::Config("dataset path is required".into()));
        }
        if self.out.is_empty() {
            return Err(CliError::Config("output path is required".into()));
        }
        if self.group_size < 1 {
            return Err(CliError::Config("group_size must be at least 1".into()));
        }
        if self.jobs < 1 {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.fork_prob) {
            return Err(CliError::Config("fork_prob outside [0, 1]".into()));
        }
        self.episode.validate().map_err(CliError::Config)?;
        self.rewards
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn mock_policy(&self) -> MockPolicy {
        MockPolicy {
            fork_prob: self.fork_prob,
            max_forks: self.max_forks,
            answer: self.answer.clone(),
            error_injection: self.error_inject,
            ..Default::default()
        }
    }

    /// Resolves the backend spec once, before any episode runs.
    pub fn prepare_backend(&self) -> Result<PreparedBackend, CliError> {
        match &self.backend {
            BackendSpec::Mock => Ok(PreparedBackend::Mock),
            BackendSpec::Scripted(path) => {
                let traces = load_traces(Path::new(path))?;
                if traces.is_empty() {
                    return Err(CliError::Config(format!("{}: no traces", path)));
                }
                Ok(PreparedBackend::Scripted(
                    traces
                        .iter()
                        .map(|t| Arc::new(ScriptedBackend::from_trace(t)))
                        .collect(),
                ))
            }
            BackendSpec::Http(url) => {
                let backend = HttpBackend::new(HttpConfig {
                    endpoint_url: url.clone(),
                    auth_token: std::env::var(TOKEN_ENV).ok(),
                    model: self.model.clone(),
                    syntax: self.episode.syntax.clone(),
                    ..Default::default()
                })
                .map_err(|e| CliError::Config(e.to_string()))?;
                Ok(PreparedBackend::Http(Arc::new(backend)))
            }
        }
    }

    /// The backend for one episode: mock backends are seeded per episode,
    /// scripted backends replay trace `episode_index`, HTTP is shared.
    pub fn backend_for_episode(
        &self,
        prepared: &PreparedBackend,
        episode_index: usize,
        episode_seed: u64,
    ) -> Result<Arc<dyn TextBackend>, CliError> {
        match prepared {
            PreparedBackend::Mock => Ok(Arc::new(MockBackend::new(
                self.mock_policy(),
                episode_seed,
                self.episode.syntax.clone(),
                self.episode.capacity,
            ))),
            PreparedBackend::Scripted(backends) => backends
                .get(episode_index)
                .cloned()
                .map(|b| b as Arc<dyn TextBackend>)
                .ok_or_else(|| {
                    CliError::Backend(format!(
                        "scripted backend has no trace for episode {}",
                        episode_index
                    ))
                }),
            PreparedBackend::Http(backend) => Ok(backend.clone()),
        }
    }
}

/// Backend state resolved once per run.
pub enum PreparedBackend {
    Mock,
    Scripted(Vec<Arc<ScriptedBackend>>),
    Http(Arc<HttpBackend>),
}

/// Loads a JSONL trace file, reporting the first bad line by number.
pub fn load_traces(path: &Path) -> Result<Vec<EpisodeTrace>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {}", path.display(), e)))?;
    let mut traces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let trace = EpisodeTrace::from_jsonl_line(line).map_err(|e| {
            CliError::Data(format!("{}:{}: {}", path.display(), lineno + 1, e))
        })?;
        traces.push(trace);
    }
    Ok(traces)
}

/// Loads a JSONL countdown dataset.
pub fn load_dataset(path: &Path) -> Result<Vec<CountdownInstance>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {}", path.display(), e)))?;
    let mut instances = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let instance: CountdownInstance = serde_json::from_str(line).map_err(|e| {
            CliError::Data(format!("{}:{}: {}", path.display(), lineno + 1, e))
        })?;
        instances.push(instance);
    }
    Ok(instances)
}

/// Writes lines to a temp file, then renames into place, so failed runs
/// leave no partial output.
pub fn write_lines_atomically(path: &Path, lines: &[String]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let body = if lines.is_empty() {
        String::new()
    } else {
        format!("{}\n", lines.join("\n"))
    };
    std::fs::write(&tmp, body)
        .map_err(|e| CliError::Config(format!("cannot write {}: {}", tmp.display(), e)))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Config(format!("cannot move into {}: {}", path.display(), e)))?;
    Ok(())
}
