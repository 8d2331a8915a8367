use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{prompt_digest, ChatBackend, Completion, LlmError, TokenUsage};

/// One line of a mock script file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub prompt_digest: String,
    pub response_text: String,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

/// Replays scripted replies keyed by prompt digest. Prompts without a
/// scripted reply fail with [`LlmError::NoScriptedReply`].
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    replies: HashMap<String, ScriptEntry>,
}

impl MockBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Result<Self, LlmError> {
        let mut replies = HashMap::new();
        for e in entries {
            if replies.contains_key(&e.prompt_digest) {
                return Err(LlmError::Script(format!("duplicate digest {}", e.prompt_digest)));
            }
            replies.insert(e.prompt_digest.clone(), e);
        }
        Ok(Self { replies })
    }

    pub fn from_path(path: &Path) -> Result<Self, LlmError> {
        let text = fs::read_to_string(path)
            .map_err(|e| LlmError::Script(format!("{}: {e}", path.display())))?;
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<ScriptEntry>(l)
                    .map_err(|e| LlmError::Script(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_entries(entries)
    }

    /// Script entry answering `prompt` with `response`.
    pub fn entry(prompt: &str, response: impl Into<String>, prompt_tokens: u64, completion_tokens: u64) -> ScriptEntry {
        ScriptEntry {
            prompt_digest: prompt_digest(prompt),
            response_text: response.into(),
            prompt_tokens,
            completion_tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl ChatBackend for MockBackend {
    fn id(&self) -> String {
        "mock".to_string()
    }

    fn complete(&self, prompt: &str) -> Result<Completion, LlmError> {
        let digest = prompt_digest(prompt);
        let entry = self
            .replies
            .get(&digest)
            .ok_or(LlmError::NoScriptedReply { digest })?;
        Ok(Completion {
            text: entry.response_text.clone(),
            usage: TokenUsage {
                prompt_tokens: entry.prompt_tokens,
                completion_tokens: entry.completion_tokens,
            },
            retries: 0,
        })
    }
}
