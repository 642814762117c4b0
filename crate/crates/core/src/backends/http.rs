//! HTTP backend speaking a chat-completions-style streaming wire format.
//!
//! Each request POSTs `{model, messages, stream: true}` and accumulates
//! `choices[0].delta.content` from `data:` lines. Stop conditions are
//! enforced client-side by scanning the deltas: once a stop tag completes,
//! reading stops and the connection drops. Transient transport failures
//! retry whole attempts with bounded exponential backoff; partial content
//! from a failed attempt is discarded.

use std::io::{BufRead, BufReader};
use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendError, BoxedStream, GenerationRequest, StopCondition, TextBackend, VecStream};
use crate::protocol::{EventKind, Role, StreamScanner, TagSyntax};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint_url: String,
    /// Bearer token; read it from an environment variable, never a flag.
    pub auth_token: Option<String>,
    pub model: String,
    /// Opaque sampling parameters merged into the request body.
    pub sampling: Value,
    pub timeout: Duration,
    pub retries: u32,
    pub backoff_base: Duration,
    pub syntax: TagSyntax,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint_url: String::new(),
            auth_token: None,
            model: String::new(),
            sampling: json!({}),
            timeout: Duration::from_secs(120),
            retries: 2,
            backoff_base: Duration::from_millis(200),
            syntax: TagSyntax::default(),
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        if config.endpoint_url.is_empty() {
            return Err(BackendError::Config("endpoint URL is empty".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpBackend { config, client })
    }

    /// One full attempt; returns the accumulated text, cut at the first stop
    /// tag. Errors are classified so the retry loop can tell fatal from
    /// transient.
    fn attempt(&self, request: &GenerationRequest) -> Result<String, AttemptError> {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "stream": true,
        });
        if let Value::Object(extra) = &self.config.sampling {
            if let Value::Object(base) = &mut body {
                for (k, v) in extra {
                    base.insert(k.clone(), v.clone());
                }
            }
        }
        let mut http = self.client.post(&self.config.endpoint_url).json(&body);
        if let Some(token) = &self.config.auth_token {
            http = http.bearer_auth(token);
        }
        let response = http.send().map_err(transport)?;
        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(AttemptError::Fatal(BackendError::Auth(format!(
                "endpoint returned {}",
                status
            ))));
        }
        if !status.is_success() {
            return Err(AttemptError::Transient(format!(
                "endpoint returned {}",
                status
            )));
        }

        let role = request.role;
        let mut scanner = StreamScanner::new(role, &self.config.syntax);
        let mut text = String::new();
        let mut reader = BufReader::new(response);
        let mut line = String::new();
        loop {
            line.clear();
            let n = reader.read_line(&mut line).map_err(|e| {
                AttemptError::Transient(format!("stream read failed: {}", e))
            })?;
            if n == 0 {
                break;
            }
            let payload = match line.trim_start().strip_prefix("data:") {
                Some(rest) => rest.trim(),
                None => continue,
            };
            if payload.is_empty() {
                continue;
            }
            if payload == "[DONE]" {
                break;
            }
            let delta: Value = serde_json::from_str(payload)
                .map_err(|e| AttemptError::Transient(format!("bad delta: {}", e)))?;
            let Some(content) = delta["choices"][0]["delta"]["content"].as_str() else {
                continue;
            };
            text.push_str(content);
            // client-side stop enforcement: scan the delta and cut as soon
            // as a stop tag completes
            for event in scanner.feed(content) {
                if stop_hit(event.kind, &request.stop_conditions) {
                    let end = event.position + event.text.len();
                    text.truncate(end);
                    return Ok(text);
                }
            }
        }
        Ok(text)
    }
}

enum AttemptError {
    Transient(String),
    Fatal(BackendError),
}

fn transport(e: reqwest::Error) -> AttemptError {
    if e.is_timeout() {
        AttemptError::Fatal(BackendError::Timeout(Duration::from_secs(0)))
    } else {
        AttemptError::Transient(e.to_string())
    }
}

fn stop_hit(kind: EventKind, stops: &[StopCondition]) -> bool {
    match kind {
        EventKind::JoinRequest => stops.contains(&StopCondition::JoinRequest),
        EventKind::AnswerClose => stops.contains(&StopCondition::AnswerClose),
        EventKind::ReturnClose => stops.contains(&StopCondition::ReturnClose),
        _ => false,
    }
}

impl TextBackend for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<BoxedStream, BackendError> {
        debug_assert!(matches!(
            request.role,
            Role::Organizer | Role::Worker
        ));
        let mut last_transient = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff_base * 2u32.pow(attempt - 1));
            }
            match self.attempt(request) {
                Ok(text) => return Ok(Box::new(VecStream::one(text))),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Transient(message)) => last_transient = message,
            }
        }
        Err(BackendError::Transport {
            message: last_transient,
            attempts: self.config.retries + 1,
        })
    }
}
