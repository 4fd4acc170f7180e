//! OpenAI-compatible chat-completions backend.

use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;

use crate::backend::{split_think_tags, Backend, BackendError, RawCompletion};
use crate::model::ModelSpec;

/// Endpoint roots for providers that speak the chat-completions protocol.
pub fn default_base_url(provider_id: &str) -> Option<&'static str> {
    Some(match provider_id {
        "openai" => "https://api.openai.com/v1",
        "deepseek" => "https://api.deepseek.com/v1",
        "qwen" | "dashscope" => "https://dashscope-intl.aliyuncs.com/compatible-mode/v1",
        "gemini" | "google" => "https://generativelanguage.googleapis.com/v1beta/openai",
        "anthropic" => "https://api.anthropic.com/v1",
        "together" => "https://api.together.xyz/v1",
        "openrouter" => "https://openrouter.ai/api/v1",
        _ => return None,
    })
}

pub struct HttpBackend {
    client: reqwest::Client,
    api_key: String,
    base_url: Option<String>,
}

impl HttpBackend {
    pub fn new(api_key: impl Into<String>) -> Self {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .expect("http client builds");
        HttpBackend {
            client,
            api_key: api_key.into(),
            base_url: None,
        }
    }

    /// Overrides the endpoint for every model served by this backend.
    pub fn with_base_url(mut self, url: impl Into<String>) -> Self {
        self.base_url = Some(url.into());
        self
    }

    fn endpoint(&self, model: &ModelSpec) -> Result<String, BackendError> {
        let base = model
            .base_url
            .as_deref()
            .or(self.base_url.as_deref())
            .or_else(|| default_base_url(&model.provider_id))
            .ok_or_else(|| {
                BackendError::Rejected(format!("no base_url configured for provider `{}`", model.provider_id))
            })?;
        Ok(format!("{}/chat/completions", base.trim_end_matches('/')))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    reasoning_content: Option<String>,
    #[serde(default)]
    reasoning: Option<String>,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

fn classify_status(status: reqwest::StatusCode, body: &str) -> BackendError {
    let lower = body.to_ascii_lowercase();
    let detail = format!("HTTP {status}: {}", body.chars().take(500).collect::<String>());
    if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
        BackendError::Auth(detail)
    } else if lower.contains("context_length")
        || lower.contains("context length")
        || lower.contains("maximum context")
        || lower.contains("too many tokens")
    {
        BackendError::ContextLength(detail)
    } else if status == reqwest::StatusCode::TOO_MANY_REQUESTS
        || status == reqwest::StatusCode::REQUEST_TIMEOUT
        || status.is_server_error()
    {
        BackendError::Transient(detail)
    } else {
        BackendError::Rejected(detail)
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn send(&self, model: &ModelSpec, prompt: &str) -> Result<RawCompletion, BackendError> {
        let mut body = json!({
            "model": model.model_name,
            "messages": [
                {"role": "system", "content": model.system_prompt()},
                {"role": "user", "content": prompt},
            ],
            "max_tokens": model.sampling.max_tokens,
        });
        if let Some(t) = model.sampling.temperature {
            body["temperature"] = json!(t);
        }
        let response = self
            .client
            .post(self.endpoint(model)?)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .await
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = response.status();
        let text = response.text().await.map_err(|e| BackendError::Transient(e.to_string()))?;
        if !status.is_success() {
            return Err(classify_status(status, &text));
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Transient(format!("malformed response body: {e}")))?;
        let usage = parsed.usage.unwrap_or_default();
        let message = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Transient("response has no choices".into()))?
            .message;
        let (content, tagged) = split_think_tags(message.content.as_deref().unwrap_or(""));
        let thinking = message
            .reasoning_content
            .or(message.reasoning)
            .filter(|t| !t.trim().is_empty())
            .or(tagged);
        Ok(RawCompletion {
            text: content,
            thinking,
            prompt_tokens: usage.prompt_tokens,
            response_tokens: usage.completion_tokens,
        })
    }
}
