//! Uniform client over chat-completion providers.
//!
//! [`Gateway`] routes each request to the backend registered for the
//! model's provider, bounds in-flight requests per provider, retries
//! transient failures with exponential backoff and, when a
//! [`ResponseCache`] is attached, calls the provider at most once per
//! (model, prompt hash).

pub mod backend;
pub mod cache;
pub mod http;
pub mod mock;
pub mod model;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use entailscope_core::digest::sha256_fields;

pub use backend::{Backend, BackendError, RawCompletion};
pub use cache::{CacheError, ResponseCache};
pub use http::HttpBackend;
pub use mock::{MockBackend, MockFailure, MockRule};
pub use model::{api_key_var, prompt_hash, ModelSpec, Sampling};

pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: u32,
    pub response: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub prompt_hash: String,
    /// [`ModelSpec::id`]
    pub model: String,
    pub response_text: String,
    pub thinking_text: Option<String>,
    pub latency_ms: u64,
    pub token_counts: TokenCounts,
    /// 1 when the first attempt succeeded.
    pub attempt: u32,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{provider}: authentication failed: {message}")]
    Auth { provider: String, message: String },
    #[error("{provider}: missing credentials, set {var}")]
    MissingCredentials { provider: String, var: String },
    #[error("{0}: prompt exceeds the context window")]
    ContextLength(String),
    #[error("{model}: gave up after {attempts} attempts: {last}")]
    RetryExhausted { model: String, attempts: u32, last: String },
    #[error("{model}: request rejected: {message}")]
    Rejected { model: String, message: String },
    #[error(transparent)]
    Cache(#[from] CacheError),
}

impl GatewayError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::Auth { .. } | GatewayError::MissingCredentials { .. } => "auth",
            GatewayError::ContextLength(_) => "context_length",
            GatewayError::RetryExhausted { .. } => "retry_exhausted",
            GatewayError::Rejected { .. } => "rejected",
            GatewayError::Cache(_) => "cache",
        }
    }

    /// Errors that concern a single instance; a run can skip it and go on.
    /// Cache failures abort the run.
    pub fn is_per_instance(&self) -> bool {
        !matches!(self, GatewayError::Cache(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Wait before attempt `attempt + 1`, doubling from `base_delay`.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32 << attempt.saturating_sub(1).min(20);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Key for the response cache: provider, model name and prompt hash.
pub fn cache_key(model: &ModelSpec, prompt_hash: &str) -> String {
    sha256_fields([
        model.provider_id.as_bytes(),
        model.model_name.as_bytes(),
        prompt_hash.as_bytes(),
    ])
}

pub struct Gateway {
    backends: Mutex<HashMap<String, Arc<dyn Backend>>>,
    semaphores: Mutex<HashMap<String, Arc<Semaphore>>>,
    limits: HashMap<String, usize>,
    default_limit: usize,
    retry: RetryPolicy,
    cache: Option<Arc<ResponseCache>>,
    backend_calls: AtomicU64,
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new()
    }
}

impl Gateway {
    pub fn new() -> Self {
        Gateway {
            backends: Mutex::new(HashMap::new()),
            semaphores: Mutex::new(HashMap::new()),
            limits: HashMap::new(),
            default_limit: DEFAULT_CONCURRENCY,
            retry: RetryPolicy::default(),
            cache: None,
            backend_calls: AtomicU64::new(0),
        }
    }

    /// Serves `provider_id` with `backend` instead of the HTTP client.
    pub fn with_backend(self, provider_id: impl Into<String>, backend: Arc<dyn Backend>) -> Self {
        self.backends.lock().expect("gateway lock").insert(provider_id.into(), backend);
        self
    }

    pub fn with_limit(mut self, provider_id: impl Into<String>, limit: usize) -> Self {
        self.limits.insert(provider_id.into(), limit.max(1));
        self
    }

    pub fn with_default_limit(mut self, limit: usize) -> Self {
        self.default_limit = limit.max(1);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn cache(&self) -> Option<&Arc<ResponseCache>> {
        self.cache.as_ref()
    }

    /// Requests sent to any backend so far, retries included.
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn limit(&self, provider_id: &str) -> usize {
        self.limits.get(provider_id).copied().unwrap_or(self.default_limit)
    }

    fn semaphore(&self, provider_id: &str) -> Arc<Semaphore> {
        self.semaphores
            .lock()
            .expect("gateway lock")
            .entry(provider_id.to_string())
            .or_insert_with(|| Arc::new(Semaphore::new(self.limit(provider_id))))
            .clone()
    }

    fn backend(&self, model: &ModelSpec) -> Result<Arc<dyn Backend>, GatewayError> {
        let mut backends = self.backends.lock().expect("gateway lock");
        if let Some(b) = backends.get(&model.provider_id) {
            return Ok(b.clone());
        }
        let var = model.api_key_var();
        let key = std::env::var(&var).map_err(|_| GatewayError::MissingCredentials {
            provider: model.provider_id.clone(),
            var,
        })?;
        let backend: Arc<dyn Backend> = Arc::new(HttpBackend::new(key));
        backends.insert(model.provider_id.clone(), backend.clone());
        Ok(backend)
    }

    /// Sends `prompt`, retrying transient failures.
    pub async fn complete(
        &self,
        model: &ModelSpec,
        template_hash: &str,
        prompt: &str,
    ) -> Result<CompletionRecord, GatewayError> {
        let backend = self.backend(model)?;
        let semaphore = self.semaphore(&model.provider_id);
        let hash = prompt_hash(template_hash, prompt, model);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            let result = {
                let _permit = semaphore.acquire().await.expect("semaphore never closed");
                self.backend_calls.fetch_add(1, Ordering::SeqCst);
                backend.send(model, prompt).await
            };
            match result {
                Ok(raw) => {
                    return Ok(CompletionRecord {
                        prompt_hash: hash,
                        model: model.id(),
                        response_text: raw.text,
                        thinking_text: if model.exposes_thinking { raw.thinking } else { None },
                        latency_ms: started.elapsed().as_millis() as u64,
                        token_counts: TokenCounts {
                            prompt: raw.prompt_tokens,
                            response: raw.response_tokens,
                        },
                        attempt,
                    })
                }
                Err(BackendError::Transient(msg)) if attempt < self.retry.max_attempts => {
                    let wait = self.retry.delay(attempt);
                    tracing::warn!(model = %model.id(), attempt, ?wait, "transient failure: {msg}");
                    tokio::time::sleep(wait).await;
                }
                Err(BackendError::Transient(last)) => {
                    return Err(GatewayError::RetryExhausted {
                        model: model.id(),
                        attempts: attempt,
                        last,
                    })
                }
                Err(BackendError::Auth(message)) => {
                    return Err(GatewayError::Auth {
                        provider: model.provider_id.clone(),
                        message,
                    })
                }
                Err(BackendError::ContextLength(_)) => return Err(GatewayError::ContextLength(model.id())),
                Err(BackendError::Rejected(message)) => {
                    return Err(GatewayError::Rejected {
                        model: model.id(),
                        message,
                    })
                }
            }
        }
    }

    /// Like [`Gateway::complete`], but answers from the cache when it can
    /// and records new responses in it. Concurrent calls for the same key
    /// wait for the first one instead of calling the provider again.
    pub async fn cached_complete(
        &self,
        model: &ModelSpec,
        template_hash: &str,
        prompt: &str,
    ) -> Result<CompletionRecord, GatewayError> {
        let Some(cache) = self.cache.as_ref() else {
            return self.complete(model, template_hash, prompt).await;
        };
        let key = cache_key(model, &prompt_hash(template_hash, prompt, model));
        if let Some(hit) = cache.get(&key) {
            return Ok(hit);
        }
        let _guard = cache.lock_key(&key).await;
        if let Some(hit) = cache.get(&key) {
            return Ok(hit);
        }
        let record = self.complete(model, template_hash, prompt).await?;
        cache.insert(&key, &record)?;
        Ok(record)
    }
}
