//! TOML configuration.
//!
//! ```toml
//! store = "data"
//! runs = "runs"
//! seed = 7
//! n_per_class = 250
//!
//! [concurrency]
//! default = 4
//! openai = 8
//!
//! [retry]
//! max_attempts = 5
//! base_delay_ms = 500
//! max_delay_ms = 30000
//!
//! [models.gpt-4o-mini]
//! provider_id = "openai"
//! model_name = "gpt-4o-mini"
//!
//! [mock_scripts]
//! mock = "fixtures/script.jsonl"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;

use entailscope_core::parser::keywords::KeywordTable;
use entailscope_core::parser::TraceParser;
use entailscope_core::prompt::TemplateSet;
use entailscope_gateway::{Gateway, MockBackend, ModelSpec, RetryPolicy, DEFAULT_CONCURRENCY};

use crate::HarnessError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryConfig {
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_base_delay")]
    pub base_delay_ms: u64,
    #[serde(default = "default_max_delay")]
    pub max_delay_ms: u64,
}

fn default_attempts() -> u32 {
    RetryPolicy::default().max_attempts
}

fn default_base_delay() -> u64 {
    RetryPolicy::default().base_delay.as_millis() as u64
}

fn default_max_delay() -> u64 {
    RetryPolicy::default().max_delay.as_millis() as u64
}

impl Default for RetryConfig {
    fn default() -> Self {
        RetryConfig {
            max_attempts: default_attempts(),
            base_delay_ms: default_base_delay(),
            max_delay_ms: default_max_delay(),
        }
    }
}

impl RetryConfig {
    pub fn policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts.max(1),
            base_delay: Duration::from_millis(self.base_delay_ms),
            max_delay: Duration::from_millis(self.max_delay_ms),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_store")]
    pub store: PathBuf,
    #[serde(default = "default_runs")]
    pub runs: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_n_per_class")]
    pub n_per_class: usize,
    /// Per-provider in-flight limits; the `default` key applies to the rest.
    #[serde(default)]
    pub concurrency: BTreeMap<String, usize>,
    #[serde(default)]
    pub retry: RetryConfig,
    #[serde(default)]
    pub models: BTreeMap<String, ModelSpec>,
    /// Providers answered by a scripted mock backend.
    #[serde(default)]
    pub mock_scripts: BTreeMap<String, PathBuf>,
    /// Directory of `<method>.prompt` files replacing the builtin templates.
    #[serde(default)]
    pub prompts: Option<PathBuf>,
    /// Keyword table replacing the builtin one.
    #[serde(default)]
    pub keywords: Option<PathBuf>,
}

fn default_store() -> PathBuf {
    PathBuf::from("data")
}

fn default_runs() -> PathBuf {
    PathBuf::from("runs")
}

fn default_seed() -> u64 {
    7
}

fn default_n_per_class() -> usize {
    250
}

impl Default for Config {
    fn default() -> Self {
        toml::from_str("").expect("empty config is valid")
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads `path`; relative paths inside are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.store);
        fix(&mut self.runs);
        self.mock_scripts.values_mut().for_each(fix);
        if let Some(p) = self.prompts.as_mut() {
            fix(p);
        }
        if let Some(p) = self.keywords.as_mut() {
            fix(p);
        }
    }

    /// A configured model, or `provider/model` for an unconfigured one.
    pub fn model(&self, name: &str) -> Result<ModelSpec, HarnessError> {
        if let Some(spec) = self.models.get(name) {
            return Ok(spec.clone());
        }
        match name.split_once('/') {
            Some((provider, model)) if !provider.is_empty() && !model.is_empty() => {
                Ok(ModelSpec::new(provider, model))
            }
            _ => Err(HarnessError::Config(format!("unknown model `{name}`"))),
        }
    }

    pub fn default_limit(&self) -> usize {
        self.concurrency.get("default").copied().unwrap_or(DEFAULT_CONCURRENCY)
    }

    pub fn templates(&self) -> Result<TemplateSet, HarnessError> {
        match &self.prompts {
            Some(dir) => Ok(TemplateSet::load_dir(dir)?),
            None => Ok(TemplateSet::builtin()),
        }
    }

    pub fn parser(&self) -> Result<TraceParser, HarnessError> {
        let table = match &self.keywords {
            Some(path) => KeywordTable::load(path)?,
            None => KeywordTable::builtin(),
        };
        Ok(TraceParser::new(table))
    }

    /// A gateway with the configured limits, retry policy and mock backends.
    pub fn gateway(&self) -> Result<Gateway, HarnessError> {
        let mut gw = Gateway::new()
            .with_default_limit(self.default_limit())
            .with_retry(self.retry.policy());
        for (provider, limit) in &self.concurrency {
            if provider != "default" {
                gw = gw.with_limit(provider.clone(), *limit);
            }
        }
        for (provider, script) in &self.mock_scripts {
            let mock = MockBackend::load_script(script)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", script.display())))?;
            gw = gw.with_backend(provider.clone(), Arc::new(mock));
        }
        Ok(gw)
    }
}
