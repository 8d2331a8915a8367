//! Chat-completion backends used for mutation generation.
//!
//! [`HttpChatBackend`] speaks the chat-completions wire shape (a single user
//! message, no streaming) and retries transient failures with exponential
//! backoff. [`MockBackend`] replays scripted replies keyed by the SHA-256
//! digest of the prompt, so whole pipeline runs are reproducible offline.

mod batch;
mod http;
mod mock;

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use batch::{complete_batch, BatchItem, BatchResult, PromptRequest};
pub use http::HttpChatBackend;
pub use mock::{MockBackend, ScriptEntry};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("request failed after {attempts} attempts (last status {}): {message}", last_status.map_or("none".to_string(), |s| s.to_string()))]
    RetriesExhausted {
        attempts: u32,
        last_status: Option<u16>,
        message: String,
    },
    #[error("server returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed server reply: {0}")]
    Malformed(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("no scripted reply for prompt digest {digest}")]
    NoScriptedReply { digest: String },
    #[error("mock script: {0}")]
    Script(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
    /// Attempts beyond the first.
    pub retries: u32,
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> String;

    fn complete(&self, prompt: &str) -> Result<Completion, LlmError>;
}

fn default_timeout() -> u64 {
    120
}
fn default_retries() -> u32 {
    3
}
fn default_concurrency() -> usize {
    4
}
fn default_backoff() -> u64 {
    500
}
fn default_max_backoff() -> u64 {
    30_000
}
fn default_key_env() -> String {
    "MUTRAG_API_KEY".to_string()
}

/// Connection settings for an HTTP chat backend. Temperature and token
/// limit are left to the model's defaults unless set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_backoff")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_max_backoff")]
    pub max_backoff_ms: u64,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
}

impl BackendConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: None,
            max_tokens: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            concurrency: default_concurrency(),
            initial_backoff_ms: default_backoff(),
            max_backoff_ms: default_max_backoff(),
            api_key_env: default_key_env(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.concurrency == 0 {
            return Err(LlmError::Config("concurrency must be at least 1".into()));
        }
        if self.endpoint.is_empty() {
            return Err(LlmError::Config("endpoint is empty".into()));
        }
        if let Some(t) = self.temperature {
            if !t.is_finite() || t < 0.0 {
                return Err(LlmError::Config(format!("invalid temperature {t}")));
            }
        }
        Ok(())
    }
}

/// Lowercase hex SHA-256 of the prompt text.
pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_sha256_hex() {
        assert_eq!(
            prompt_digest("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg: BackendConfig =
            toml::from_str("endpoint = \"http://x/v1/chat/completions\"\nmodel = \"m\"").unwrap();
        assert_eq!(cfg, BackendConfig::new("http://x/v1/chat/completions", "m"));
        assert!(cfg.validate().is_ok());
        let bad = BackendConfig { concurrency: 0, ..cfg };
        assert!(matches!(bad.validate(), Err(LlmError::Config(_))));
    }
}
