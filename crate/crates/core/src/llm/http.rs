use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::json;

use super::{BackendConfig, ChatBackend, Completion, LlmError, TokenUsage};

pub struct HttpChatBackend {
    cfg: BackendConfig,
    api_key: Option<String>,
    client: Client,
}

#[derive(Deserialize)]
struct Reply {
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
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Done(Completion),
    Retry { status: Option<u16>, message: String, wait: Option<Duration> },
}

impl HttpChatBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        let client = Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self { cfg, api_key, client })
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .cfg
            .initial_backoff_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.cfg.max_backoff_ms);
        Duration::from_millis(ms)
    }

    fn attempt(&self, prompt: &str) -> Result<Attempt, LlmError> {
        let mut body = json!({
            "model": self.cfg.model,
            "messages": [{ "role": "user", "content": prompt }],
            "stream": false,
        });
        if let Some(t) = self.cfg.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(m) = self.cfg.max_tokens {
            body["max_tokens"] = json!(m);
        }
        let mut req = self.client.post(&self.cfg.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Ok(Attempt::Retry { status: None, message: e.to_string(), wait: None })
            }
            Err(e) => return Err(LlmError::Malformed(e.to_string())),
        };
        let status = resp.status();
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Err(LlmError::Auth { status: status.as_u16() });
        }
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            let wait = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            let message = resp.text().unwrap_or_default();
            return Ok(Attempt::Retry { status: Some(status.as_u16()), message, wait });
        }
        if !status.is_success() {
            return Err(LlmError::Http {
                status: status.as_u16(),
                body: resp.text().unwrap_or_default(),
            });
        }
        let text = resp.text().map_err(|e| LlmError::Malformed(e.to_string()))?;
        let reply: Reply = serde_json::from_str(&text).map_err(|e| LlmError::Malformed(e.to_string()))?;
        let content = reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Malformed("reply has no message content".into()))?;
        let usage = reply.usage.map_or(TokenUsage::default(), |u| TokenUsage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        });
        Ok(Attempt::Done(Completion { text: content, usage, retries: 0 }))
    }
}

impl ChatBackend for HttpChatBackend {
    fn id(&self) -> String {
        format!("http:{}", self.cfg.model)
    }

    fn complete(&self, prompt: &str) -> Result<Completion, LlmError> {
        let mut last_status = None;
        let mut last_message = String::new();
        for attempt in 0..=self.cfg.max_retries {
            match self.attempt(prompt)? {
                Attempt::Done(mut c) => {
                    c.retries = attempt;
                    return Ok(c);
                }
                Attempt::Retry { status, message, wait } => {
                    log::debug!("attempt {} failed ({status:?}): {message}", attempt + 1);
                    last_status = status;
                    last_message = message;
                    if attempt < self.cfg.max_retries {
                        let max = Duration::from_millis(self.cfg.max_backoff_ms);
                        thread::sleep(wait.map_or_else(|| self.backoff(attempt), |w| w.min(max)));
                    }
                }
            }
        }
        Err(LlmError::RetriesExhausted {
            attempts: self.cfg.max_retries + 1,
            last_status,
            message: last_message,
        })
    }
}
