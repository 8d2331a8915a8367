use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::chunker::Grammar;
use crate::embedder::{EmbeddingBackend, KeySide, LexicalEmbedder, Metric, RemoteEmbedder, DEFAULT_DIMENSION};
use crate::llm::{BackendConfig, ChatBackend, HttpChatBackend, MockBackend};
use crate::process::CommandTemplate;
use crate::tcp::DEFAULT_OMEGA;
use crate::validity::Normalization;

fn yes() -> bool {
    true
}
fn top_n() -> usize {
    6
}
fn out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn workers() -> usize {
    4
}
fn omega() -> f64 {
    DEFAULT_OMEGA
}
fn dimension() -> usize {
    DEFAULT_DIMENSION
}
fn compile_timeout() -> u64 {
    60
}
fn test_timeout() -> u64 {
    600
}
fn timeout_floor() -> u64 {
    5
}
fn embed_timeout() -> u64 {
    60
}
fn key_env() -> String {
    "MUTRAG_API_KEY".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Lexical,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    #[serde(default)]
    pub kind: EmbedderKind,
    #[serde(default = "dimension")]
    pub dimension: usize,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "embed_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "key_env")]
    pub api_key_env: String,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Lexical,
            dimension: dimension(),
            endpoint: None,
            model: None,
            timeout_secs: embed_timeout(),
            api_key_env: key_env(),
        }
    }
}

impl EmbedderConfig {
    pub fn build(&self) -> Result<Box<dyn EmbeddingBackend>, PipelineError> {
        match self.kind {
            EmbedderKind::Lexical => Ok(Box::new(LexicalEmbedder::new(self.dimension))),
            EmbedderKind::Remote => {
                let endpoint = self.endpoint.clone().ok_or_else(|| PipelineError::Config("embedder.endpoint is required for a remote embedder".into()))?;
                let model = self.model.clone().ok_or_else(|| PipelineError::Config("embedder.model is required for a remote embedder".into()))?;
                let key = std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty());
                let e = RemoteEmbedder::new(endpoint, model, self.dimension, key, Duration::from_secs(self.timeout_secs))
                    .map_err(|e| PipelineError::Config(e.to_string()))?;
                Ok(Box::new(e))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[serde(default)]
    pub kind: BackendKind,
    /// Mock response script (JSONL).
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub http: Option<BackendConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Commands {
    /// Compile command template; the built-in syntax check is used when unset.
    #[serde(default)]
    pub compile: Option<String>,
    /// Test runner template printing `<test-id> PASS|FAIL` lines.
    #[serde(default)]
    pub test: Option<String>,
    #[serde(default = "compile_timeout")]
    pub compile_timeout_secs: u64,
    #[serde(default = "test_timeout")]
    pub test_timeout_secs: u64,
    /// Lower bound for the per-mutant timeout (twice the original run).
    #[serde(default = "timeout_floor")]
    pub mutant_timeout_floor_secs: u64,
}

impl Default for Commands {
    fn default() -> Self {
        Self {
            compile: None,
            test: None,
            compile_timeout_secs: compile_timeout(),
            test_timeout_secs: test_timeout(),
            mutant_timeout_floor_secs: timeout_floor(),
        }
    }
}

/// Pipeline settings, usually read from a TOML file. Relative paths are
/// resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub index: Option<PathBuf>,
    #[serde(default)]
    pub targets: Option<PathBuf>,
    /// Few-shot examples per prompt.
    #[serde(default = "top_n")]
    pub top_n: usize,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub key_side: KeySide,
    #[serde(default = "yes")]
    pub chunking: bool,
    #[serde(default = "yes")]
    pub rag: bool,
    #[serde(default = "out_dir")]
    pub output_dir: PathBuf,
    /// Seeds target sampling, the only random step.
    #[serde(default)]
    pub seed: u64,
    /// Evaluate a random subset of this many targets.
    #[serde(default)]
    pub sample_targets: Option<usize>,
    #[serde(default = "workers")]
    pub workers: usize,
    #[serde(default)]
    pub language: Grammar,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "omega")]
    pub omega: f64,
    /// Directory of precomputed `<bug>.matrix` files.
    #[serde(default)]
    pub matrices_dir: Option<PathBuf>,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub commands: Commands,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        toml::from_str("").expect("every field has a default")
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.index);
        fix(&mut self.targets);
        fix(&mut self.matrices_dir);
        fix(&mut self.backend.script);
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.top_n == 0 {
            return bad("top_n must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return bad("omega must lie in [0, 1]");
        }
        if self.embedder.dimension == 0 {
            return bad("embedder.dimension must be at least 1");
        }
        if self.rag && self.corpus.is_none() {
            return bad("rag is enabled but no corpus is configured");
        }
        for t in [&self.commands.compile, &self.commands.test].into_iter().flatten() {
            CommandTemplate::parse(t).map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if let Some(h) = &self.backend.http {
            h.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn chat_backend(&self) -> Result<Box<dyn ChatBackend>, PipelineError> {
        match self.backend.kind {
            BackendKind::Mock => {
                let path = self.backend.script.as_ref().ok_or_else(|| PipelineError::Config("backend.script is required for the mock backend".into()))?;
                Ok(Box::new(MockBackend::from_path(path)?))
            }
            BackendKind::Http => {
                let cfg = self.backend.http.clone().ok_or_else(|| PipelineError::Config("[backend.http] is required for the http backend".into()))?;
                Ok(Box::new(HttpChatBackend::new(cfg)?))
            }
        }
    }

    /// In-flight request limit for generation.
    pub fn concurrency(&self) -> usize {
        match (&self.backend.kind, &self.backend.http) {
            (BackendKind::Http, Some(h)) => h.concurrency,
            _ => self.workers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = PipelineConfig::from_toml("rag = false", Path::new("/base")).unwrap();
        assert_eq!(c.top_n, 6);
        assert_eq!(c.metric, Metric::Euclidean);
        assert_eq!(c.key_side, KeySide::PostFix);
        assert!(c.chunking);
        assert_eq!(c.output_dir, PathBuf::from("/base/out"));
        assert_eq!(c.omega, 0.5);
        assert_eq!(c.embedder.dimension, 512);
        assert_eq!(c.backend.kind, BackendKind::Mock);
    }

    #[test]
    fn paths_resolve_and_values_validate() {
        let c = PipelineConfig::from_toml(
            "corpus = \"c.jsonl\"\nmetric = \"cosine\"\n[backend]\nscript = \"/abs/s.jsonl\"\n[commands]\ntest = \"sh run.sh {source}\"",
            Path::new("/cfg"),
        )
        .unwrap();
        assert_eq!(c.corpus, Some(PathBuf::from("/cfg/c.jsonl")));
        assert_eq!(c.backend.script, Some(PathBuf::from("/abs/s.jsonl")));
        assert_eq!(c.metric, Metric::Cosine);
        for bad in ["top_n = 0\nrag = false", "metric = \"manhattan\"", "rag = true", "rag = false\nomega = 2.0", "rag = false\nbogus = 1"] {
            assert!(PipelineConfig::from_toml(bad, Path::new("/")).is_err(), "{bad}");
        }
    }
}
