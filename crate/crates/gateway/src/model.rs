use serde::{Deserialize, Serialize};

use entailscope_core::digest::sha256_fields;

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a helpful assistant.";

/// Decoding parameters sent with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    /// `None` omits the parameter, for providers that reject it. Config
    /// files spell it `"none"`.
    #[serde(default = "default_temperature", deserialize_with = "temperature")]
    pub temperature: Option<f64>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_temperature() -> Option<f64> {
    Some(0.0)
}

fn temperature<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Value {
        Number(f64),
        Word(String),
    }
    match Option::<Value>::deserialize(d)? {
        None => Ok(None),
        Some(Value::Number(t)) => Ok(Some(t)),
        Some(Value::Word(w)) if w.eq_ignore_ascii_case("none") => Ok(None),
        Some(Value::Word(w)) => Err(serde::de::Error::custom(format!(
            "temperature must be a number or \"none\", got `{w}`"
        ))),
    }
}

fn default_max_tokens() -> u32 {
    4096
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
        }
    }
}

impl Sampling {
    /// Stable text form used in digests.
    pub fn canonical(&self) -> String {
        let t = self.temperature.map_or_else(|| "none".to_string(), |t| format!("{t:?}"));
        format!("temperature={t};max_tokens={}", self.max_tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub provider_id: String,
    pub model_name: String,
    #[serde(default)]
    pub is_reasoning_model: bool,
    /// The provider returns intermediate reasoning tokens.
    #[serde(default)]
    pub exposes_thinking: bool,
    #[serde(default)]
    pub sampling: Sampling,
    /// OpenAI-compatible endpoint root; defaults per provider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
}

impl ModelSpec {
    pub fn new(provider_id: impl Into<String>, model_name: impl Into<String>) -> Self {
        ModelSpec {
            provider_id: provider_id.into(),
            model_name: model_name.into(),
            is_reasoning_model: false,
            exposes_thinking: false,
            sampling: Sampling::default(),
            base_url: None,
            system_prompt: None,
        }
    }

    pub fn reasoning(mut self, exposes_thinking: bool) -> Self {
        self.is_reasoning_model = true;
        self.exposes_thinking = exposes_thinking;
        self
    }

    /// `<provider>/<model>`
    pub fn id(&self) -> String {
        format!("{}/{}", self.provider_id, self.model_name)
    }

    /// Reasoning models never get the step-by-step line.
    pub fn effective_cot(&self, requested: bool) -> bool {
        requested && !self.is_reasoning_model
    }

    pub fn system_prompt(&self) -> &str {
        self.system_prompt.as_deref().unwrap_or(DEFAULT_SYSTEM_PROMPT)
    }

    /// Everything besides the user prompt that shapes the response.
    pub fn request_params(&self) -> String {
        format!("{};system={}", self.sampling.canonical(), self.system_prompt())
    }

    /// Name of the environment variable holding the provider's key.
    pub fn api_key_var(&self) -> String {
        api_key_var(&self.provider_id)
    }
}

/// `<PROVIDER_ID>_API_KEY`, upper-cased, other characters mapped to `_`.
pub fn api_key_var(provider_id: &str) -> String {
    let stem: String = provider_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("{stem}_API_KEY")
}

/// Digest of (template hash, rendered prompt, request parameters).
pub fn prompt_hash(template_hash: &str, prompt: &str, model: &ModelSpec) -> String {
    sha256_fields([
        template_hash.as_bytes(),
        prompt.as_bytes(),
        model.request_params().as_bytes(),
    ])
}
