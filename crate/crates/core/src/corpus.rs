//! Bug–fix corpus ingestion.
//!
//! A corpus file holds one JSON object per line with the fields `id`,
//! `project`, `pre_fix_code`, `post_fix_code` and an optional string map
//! `metadata`. Only records whose pre/post texts differ in exactly one
//! contiguous region of lines are kept; everything else is reported and
//! skipped.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of unchanged lines kept on each side of a hunk.
pub const CONTEXT_LINES: usize = 3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("corpus contains no valid records ({skipped} skipped)")]
    NoValidRecords { skipped: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiffError {
    #[error("no change")]
    Identical,
    #[error("multi-hunk")]
    MultiHunk,
    #[error("empty input")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("hunk does not apply at line {line}")]
pub struct ApplyError {
    pub line: usize,
}

/// Splits text into physical lines, each keeping its `\n` terminator.
pub fn split_lines(text: &str) -> Vec<&str> {
    text.split_inclusive('\n').collect()
}

fn strip_terminator(line: &str) -> &str {
    let line = line.strip_suffix('\n').unwrap_or(line);
    line.strip_suffix('\r').unwrap_or(line)
}

/// A single contiguous line-level edit between a buggy and a fixed method.
///
/// Line texts keep their terminators so that [`Hunk::apply`] is byte-exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    /// 1-based line in the pre-fix text where the changed region starts.
    /// For a pure insertion this is the line before which text is inserted.
    pub pre_start: usize,
    /// 1-based line in the post-fix text where the changed region starts.
    pub post_start: usize,
    pub pre_lines: Vec<(usize, String)>,
    pub post_lines: Vec<(usize, String)>,
    pub context_before: Vec<String>,
    pub context_after: Vec<String>,
}

impl Hunk {
    /// Removed lines without terminators.
    pub fn removed(&self) -> impl Iterator<Item = &str> {
        self.pre_lines.iter().map(|(_, l)| strip_terminator(l))
    }

    /// Inserted lines without terminators.
    pub fn added(&self) -> impl Iterator<Item = &str> {
        self.post_lines.iter().map(|(_, l)| strip_terminator(l))
    }

    /// True when exactly one line was replaced by exactly one line.
    pub fn is_one_line_replacement(&self) -> bool {
        self.pre_lines.len() == 1 && self.post_lines.len() == 1
    }

    /// Replays the edit on `pre`, checking that the removed lines are present.
    pub fn apply(&self, pre: &str) -> Result<String, ApplyError> {
        let lines = split_lines(pre);
        let start = self.pre_start - 1;
        let end = start + self.pre_lines.len();
        if end > lines.len() {
            return Err(ApplyError {
                line: self.pre_start,
            });
        }
        for (offset, (_, expected)) in self.pre_lines.iter().enumerate() {
            if lines[start + offset] != expected {
                return Err(ApplyError {
                    line: start + offset + 1,
                });
            }
        }
        let mut out = String::with_capacity(pre.len());
        for line in &lines[..start] {
            out.push_str(line);
        }
        for (_, line) in &self.post_lines {
            out.push_str(line);
        }
        for line in &lines[end..] {
            out.push_str(line);
        }
        Ok(out)
    }
}

/// Computes the single hunk turning `pre` into `post`.
///
/// The edit is single-hunk exactly when, after stripping the longest common
/// prefix and suffix of lines, the two middle regions share no line: any
/// shared line would extend the longest common subsequence beyond the
/// prefix and suffix and force a second changed region.
pub fn diff_hunk(pre: &str, post: &str) -> Result<Hunk, DiffError> {
    if pre.is_empty() || post.is_empty() {
        return Err(DiffError::EmptyInput);
    }
    if pre == post {
        return Err(DiffError::Identical);
    }
    let a = split_lines(pre);
    let b = split_lines(post);
    let shortest = a.len().min(b.len());

    let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let suffix = a
        .iter()
        .rev()
        .zip(b.iter().rev())
        .take(shortest - prefix)
        .take_while(|(x, y)| x == y)
        .count();

    let mid_a = &a[prefix..a.len() - suffix];
    let mid_b = &b[prefix..b.len() - suffix];
    let seen: HashSet<&str> = mid_a.iter().copied().collect();
    if mid_b.iter().any(|line| seen.contains(line)) {
        return Err(DiffError::MultiHunk);
    }

    let number = |base: usize, lines: &[&str]| -> Vec<(usize, String)> {
        lines
            .iter()
            .enumerate()
            .map(|(i, l)| (base + i + 1, (*l).to_string()))
            .collect()
    };
    Ok(Hunk {
        pre_start: prefix + 1,
        post_start: prefix + 1,
        pre_lines: number(prefix, mid_a),
        post_lines: number(prefix, mid_b),
        context_before: a[prefix.saturating_sub(CONTEXT_LINES)..prefix]
            .iter()
            .map(|l| strip_terminator(l).to_string())
            .collect(),
        context_after: a[a.len() - suffix..(a.len() - suffix + CONTEXT_LINES).min(a.len())]
            .iter()
            .map(|l| strip_terminator(l).to_string())
            .collect(),
    })
}

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    #[serde(default)]
    pub project: String,
    pub pre_fix_code: String,
    pub post_fix_code: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

/// A validated single-hunk bug and its fix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BugFixPair {
    pub id: String,
    pub project: String,
    pub pre_fix_code: String,
    pub post_fix_code: String,
    pub hunk: Hunk,
    pub metadata: BTreeMap<String, String>,
}

impl BugFixPair {
    pub fn new(
        id: impl Into<String>,
        project: impl Into<String>,
        pre_fix_code: impl Into<String>,
        post_fix_code: impl Into<String>,
    ) -> Result<Self, DiffError> {
        Self::from_record(CorpusRecord {
            id: id.into(),
            project: project.into(),
            pre_fix_code: pre_fix_code.into(),
            post_fix_code: post_fix_code.into(),
            metadata: BTreeMap::new(),
        })
    }

    pub fn from_record(record: CorpusRecord) -> Result<Self, DiffError> {
        let hunk = diff_hunk(&record.pre_fix_code, &record.post_fix_code)?;
        Ok(Self {
            id: record.id,
            project: record.project,
            pre_fix_code: record.pre_fix_code,
            post_fix_code: record.post_fix_code,
            hunk,
            metadata: record.metadata,
        })
    }

    pub fn record(&self) -> CorpusRecord {
        CorpusRecord {
            id: self.id.clone(),
            project: self.project.clone(),
            pre_fix_code: self.pre_fix_code.clone(),
            post_fix_code: self.post_fix_code.clone(),
            metadata: self.metadata.clone(),
        }
    }
}

/// Immutable ordered collection of bug–fix pairs.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pairs: Vec<BugFixPair>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_pairs(pairs: Vec<BugFixPair>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(pairs.len());
        for (i, pair) in pairs.iter().enumerate() {
            if by_id.insert(pair.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(pair.id.clone()));
            }
        }
        Ok(Self { pairs, by_id })
    }

    pub fn pairs(&self) -> &[BugFixPair] {
        &self.pairs
    }

    pub fn get(&self, id: &str) -> Option<&BugFixPair> {
        self.by_id.get(id).map(|&i| &self.pairs[i])
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, BugFixPair> {
        self.pairs.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedRecord {
    /// 1-based line of the record in the corpus file.
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug)]
pub struct Ingested {
    pub corpus: Corpus,
    pub skipped: Vec<SkippedRecord>,
}

pub fn ingest_corpus(path: &Path) -> Result<Ingested, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ingest_str(&text)
}

/// Parses and validates corpus text. Records are independent, so the
/// per-line work runs in parallel; output order follows the file.
pub fn ingest_str(text: &str) -> Result<Ingested, CorpusError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect();

    let parsed: Vec<(usize, Result<CorpusRecord, String>)> = lines
        .par_iter()
        .map(|&(n, l)| {
            (
                n,
                serde_json::from_str::<CorpusRecord>(l).map_err(|e| format!("malformed record: {e}")),
            )
        })
        .collect();

    let mut seen = HashSet::new();
    for (_, record) in &parsed {
        if let Ok(r) = record {
            if !seen.insert(r.id.as_str()) {
                return Err(CorpusError::DuplicateId(r.id.clone()));
            }
        }
    }

    let validated: Vec<(usize, Option<String>, Result<BugFixPair, String>)> = parsed
        .into_par_iter()
        .map(|(n, record)| match record {
            Ok(r) => {
                let id = r.id.clone();
                (n, Some(id), BugFixPair::from_record(r).map_err(|e| e.to_string()))
            }
            Err(e) => (n, None, Err(e)),
        })
        .collect();

    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for (line, id, result) in validated {
        match result {
            Ok(pair) => pairs.push(pair),
            Err(reason) => {
                log::warn!("skipping corpus record at line {line}: {reason}");
                skipped.push(SkippedRecord { line, id, reason });
            }
        }
    }
    if pairs.is_empty() {
        return Err(CorpusError::NoValidRecords {
            skipped: skipped.len(),
        });
    }
    Ok(Ingested {
        corpus: Corpus::from_pairs(pairs)?,
        skipped,
    })
}
