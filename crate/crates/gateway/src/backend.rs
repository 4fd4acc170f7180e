use std::sync::LazyLock;

use async_trait::async_trait;
use regex::Regex;
use thiserror::Error;

use crate::model::ModelSpec;

/// What a provider returned for one request.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawCompletion {
    pub text: String,
    pub thinking: Option<String>,
    pub prompt_tokens: u32,
    pub response_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("prompt exceeds the model's context window: {0}")]
    ContextLength(String),
    /// Worth retrying: rate limits, timeouts, server errors.
    #[error("transient provider error: {0}")]
    Transient(String),
    #[error("provider rejected the request: {0}")]
    Rejected(String),
}

#[async_trait]
pub trait Backend: Send + Sync {
    async fn send(&self, model: &ModelSpec, prompt: &str) -> Result<RawCompletion, BackendError>;
}

static THINK_BLOCK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<think>(.*?)(?:</think>|\z)").unwrap());

/// Splits `<think>...</think>` blocks out of a response.
pub fn split_think_tags(text: &str) -> (String, Option<String>) {
    let mut thinking = Vec::new();
    for c in THINK_BLOCK.captures_iter(text) {
        thinking.push(c[1].trim().to_string());
    }
    if thinking.is_empty() {
        // some servers strip the opening tag
        if let Some((before, after)) = text.split_once("</think>") {
            return (after.trim().to_string(), Some(before.trim().to_string()));
        }
        return (text.to_string(), None);
    }
    let visible = THINK_BLOCK.replace_all(text, "");
    (visible.trim().to_string(), Some(thinking.join("\n\n")))
}
