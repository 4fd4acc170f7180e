//! Scripted backend for hermetic runs.
//!
//! A script is a list of rules; the first rule whose `match` text occurs
//! in the prompt answers it. Scripts load from JSONL, one rule per line:
//!
//! ```json
//! {"match": "The sky is green.", "response": "no", "fail_times": 2}
//! ```

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, RawCompletion};
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFailure {
    Auth,
    ContextLength,
    Transient,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub pattern: String,
    #[serde(default)]
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinking: Option<String>,
    /// Transient failures to return before answering.
    #[serde(default)]
    pub fail_times: u32,
    /// Fail every call with this error instead of answering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<MockFailure>,
}

impl MockRule {
    pub fn new(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        MockRule {
            pattern: pattern.into(),
            response: response.into(),
            thinking: None,
            fail_times: 0,
            error: None,
        }
    }

    pub fn with_thinking(mut self, thinking: impl Into<String>) -> Self {
        self.thinking = Some(thinking.into());
        self
    }

    pub fn failing(mut self, times: u32) -> Self {
        self.fail_times = times;
        self
    }

    pub fn erroring(mut self, error: MockFailure) -> Self {
        self.error = Some(error);
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Default)]
pub struct MockBackend {
    rules: Vec<MockRule>,
    failures: Mutex<Vec<u32>>,
    delay: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>) -> Self {
        let failures = rules.iter().map(|r| r.fail_times).collect();
        MockBackend {
            rules,
            failures: Mutex::new(failures),
            ..Default::default()
        }
    }

    /// Answers every prompt with `response`.
    pub fn constant(response: impl Into<String>) -> Self {
        Self::new(vec![MockRule::new("", response)])
    }

    pub fn parse_script(text: &str) -> Result<Self, ScriptError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            rules.push(serde_json::from_str(line).map_err(|source| ScriptError::Json { line: i + 1, source })?);
        }
        Ok(Self::new(rules))
    }

    pub fn load_script(path: &Path) -> Result<Self, ScriptError> {
        Self::parse_script(&std::fs::read_to_string(path)?)
    }

    /// Holds every call for `delay` before answering.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of calls that were in progress at the same time.
    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    fn answer(&self, prompt: &str) -> Result<RawCompletion, BackendError> {
        let Some(k) = self.rules.iter().position(|r| prompt.contains(&r.pattern)) else {
            return Err(BackendError::Rejected("no scripted response for prompt".into()));
        };
        let rule = &self.rules[k];
        if let Some(err) = rule.error {
            let msg = format!("scripted {err:?}");
            return Err(match err {
                MockFailure::Auth => BackendError::Auth(msg),
                MockFailure::ContextLength => BackendError::ContextLength(msg),
                MockFailure::Transient => BackendError::Transient(msg),
                MockFailure::Rejected => BackendError::Rejected(msg),
            });
        }
        {
            let mut failures = self.failures.lock().expect("mock lock");
            if failures[k] > 0 {
                failures[k] -= 1;
                return Err(BackendError::Transient("scripted transient failure".into()));
            }
        }
        Ok(RawCompletion {
            text: rule.response.clone(),
            thinking: rule.thinking.clone(),
            prompt_tokens: prompt.split_whitespace().count() as u32,
            response_tokens: rule.response.split_whitespace().count() as u32,
        })
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

#[async_trait]
impl Backend for MockBackend {
    async fn send(&self, _model: &ModelSpec, prompt: &str) -> Result<RawCompletion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        self.answer(prompt)
    }
}
