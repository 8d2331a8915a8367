//! End-to-end generation and evaluation over a set of target methods.
//!
//! `generate` chunks each target, retrieves few-shot examples, prompts the
//! model and materializes mutants into the output directory. `evaluate`
//! reads those artifacts back, classifies validity, obtains kill matrices
//! (precomputed or by running the test command) and writes one report.

mod config;
mod evaluate;
mod generate;

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{BackendKind, BackendSection, Commands, EmbedderConfig, EmbedderKind, PipelineConfig};
pub use evaluate::{
    render_report, run_evaluate, run_execute, run_validate, BugEvaluation, EvaluationReport, GenerationCost, TcpRow, TcpSummary,
};
pub use generate::{
    generate_from_config, load_resources, mutant_id, plan_prompts, prompt_id, run_generate, GenerateSummary, ManifestEntry, PlannedChunk, PlannedTarget,
    PromptRecord, Resources, TargetSummary,
};

pub const MANIFEST: &str = "manifest.jsonl";
pub const PROMPTS: &str = "prompts.jsonl";
pub const MUTANTS: &str = "mutants.jsonl";
pub const TARGET_SUMMARY: &str = "targets.jsonl";
pub const GENERATE_SUMMARY: &str = "generate.json";
pub const VALIDITY: &str = "validity.jsonl";
pub const VALIDITY_TXT: &str = "validity.txt";
pub const COUPLING: &str = "coupling.jsonl";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";
pub const MATRICES: &str = "matrices";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Record { path: String, line: usize, detail: String },
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Index(#[from] crate::embedder::IndexError),
    #[error(transparent)]
    Llm(#[from] crate::llm::LlmError),
    #[error(transparent)]
    Exec(#[from] crate::execution::ExecError),
    #[error("no target succeeded ({failed} failed)")]
    NoTargetSucceeded { failed: usize },
    #[error("no kill matrix source: no stored matrices and no test command")]
    NoMatrixSource,
}

impl PipelineError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Mutate the fixed version; feeds validity, effectiveness and TCP.
    #[default]
    Fixed,
    /// Mutate the buggy version; feeds fault localization.
    Buggy,
}

/// One program version whose focal method is mutated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub bug_id: String,
    #[serde(default)]
    pub project: String,
    /// Program file holding the focal method.
    pub source: PathBuf,
    /// First and last line of the focal method, 1-based inclusive.
    pub start_line: usize,
    pub end_line: usize,
    #[serde(default)]
    pub mode: Mode,
    /// Tests failing on the buggy version.
    #[serde(default)]
    pub bug_revealing_tests: BTreeSet<String>,
    /// Faulty lines of the buggy source (buggy mode).
    #[serde(default)]
    pub faulty_lines: BTreeSet<usize>,
    /// Copied into every test run directory when set.
    #[serde(default)]
    pub project_dir: Option<PathBuf>,
    /// Where the program is written inside the run directory; defaults to
    /// the source file name.
    #[serde(default)]
    pub source_path: Option<PathBuf>,
}

impl Target {
    pub fn file_name(&self) -> String {
        self.source.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_else(|| "Source".into())
    }

    pub fn run_path(&self) -> PathBuf {
        self.source_path.clone().unwrap_or_else(|| PathBuf::from(self.file_name()))
    }
}

/// Reads targets; relative paths resolve against the file's directory.
pub fn load_targets(path: &Path) -> Result<Vec<Target>, PipelineError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut targets: Vec<Target> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for (i, t) in targets.iter_mut().enumerate() {
        let bad = |detail: String| PipelineError::Record { path: path.display().to_string(), line: i + 1, detail };
        if t.bug_id.is_empty() || t.bug_id.contains(char::is_whitespace) {
            return Err(bad(format!("invalid bug id `{}`", t.bug_id)));
        }
        if !seen.insert(t.bug_id.clone()) {
            return Err(bad(format!("duplicate bug id `{}`", t.bug_id)));
        }
        if t.start_line == 0 || t.end_line < t.start_line {
            return Err(bad(format!("bad line range {}-{}", t.start_line, t.end_line)));
        }
        for p in [Some(&mut t.source), t.project_dir.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(targets)
}

/// Keeps `k` targets chosen by the seeded generator, in original order.
pub fn sample_targets(targets: Vec<Target>, k: Option<usize>, seed: u64) -> Vec<Target> {
    match k {
        Some(k) if k < targets.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut keep: Vec<usize> = rand::seq::index::sample(&mut rng, targets.len(), k).into_vec();
            keep.sort_unstable();
            keep.into_iter().map(|i| targets[i].clone()).collect()
        }
        _ => targets,
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Record {
                path: path.display().to_string(),
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let io = |e| PipelineError::io(path, e);
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| PipelineError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::io(path, e.into()))?;
    fs::write(path, text + "\n").map_err(|e| PipelineError::io(path, e))
}
