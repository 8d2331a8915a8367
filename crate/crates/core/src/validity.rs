//! Mutant validity: duplicates, compilability and the generation,
//! non-duplicate and compilable rates.
//!
//! Sets follow the usual notation: `A` is every generated mutant, `D ⊆ A`
//! the duplicates and `C ⊆ A` the mutants that compile. Useful mutants are
//! approximated by `C − D`.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::split_lines;
use crate::process::{run_command, CommandTemplate, ProcessError};
use crate::promptgen::Mutant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Trim both ends and collapse internal whitespace runs to one space.
    #[default]
    Collapse,
    Exact,
}

impl FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "collapse" => Ok(Self::Collapse),
            "exact" => Ok(Self::Exact),
            other => Err(format!("unknown normalization `{other}`")),
        }
    }
}

pub fn normalize(line: &str, mode: Normalization) -> String {
    match mode {
        Normalization::Exact => line.to_string(),
        Normalization::Collapse => line.split_whitespace().collect::<Vec<_>>().join(" "),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum DuplicateReason {
    SameAsOriginal,
    RepeatOf { canonical: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Duplicate {
    pub id: String,
    #[serde(flatten)]
    pub reason: DuplicateReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DuplicatePartition {
    /// Non-duplicates in input order.
    pub canonical: Vec<String>,
    pub duplicates: Vec<Duplicate>,
}

impl DuplicatePartition {
    pub fn duplicate_ids(&self) -> BTreeSet<String> {
        self.duplicates.iter().map(|d| d.id.clone()).collect()
    }
}

/// Splits one bug's mutant stream into canonical mutants and duplicates.
///
/// A mutant is a duplicate when its mutated line equals the original line
/// at `target_line`, or when `(target_line, mutated line)` was already seen
/// earlier in the stream.
pub fn dedup(mutants: &[Mutant], original_source: &str, mode: Normalization) -> DuplicatePartition {
    let original = split_lines(original_source);
    let mut seen: HashMap<(usize, String), &str> = HashMap::new();
    let mut out = DuplicatePartition::default();
    for m in mutants {
        let after = normalize(&m.mutated_line_text, mode);
        let orig = original
            .get(m.target_line.wrapping_sub(1))
            .map(|l| l.trim_end_matches(['\n', '\r']))
            .unwrap_or(&m.original_line_text);
        if after == normalize(orig, mode) {
            out.duplicates.push(Duplicate { id: m.id.clone(), reason: DuplicateReason::SameAsOriginal });
            continue;
        }
        match seen.get(&(m.target_line, after.clone())) {
            Some(first) => out.duplicates.push(Duplicate {
                id: m.id.clone(),
                reason: DuplicateReason::RepeatOf { canonical: first.to_string() },
            }),
            None => {
                seen.insert((m.target_line, after), &m.id);
                out.canonical.push(m.id.clone());
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileResult {
    pub mutant_id: String,
    pub compiled: bool,
    pub timed_out: bool,
    pub stderr: String,
}

/// Writes the mutant to `file_name` in a fresh directory and runs the
/// compile command there. Success means exit status 0 within `timeout`.
pub fn check_compile(
    mutant: &Mutant,
    command: &CommandTemplate,
    file_name: &str,
    timeout: Duration,
) -> Result<CompileResult, ProcessError> {
    let io = |e| ProcessError::Io { program: command.program().to_string(), source: e };
    let dir = tempfile::tempdir().map_err(io)?;
    let source = dir.path().join(file_name);
    fs::write(&source, &mutant.source).map_err(io)?;
    let out = run_command(&command.render(&source, dir.path()), dir.path(), timeout)?;
    Ok(CompileResult {
        mutant_id: mutant.id.clone(),
        compiled: out.success(),
        timed_out: out.timed_out,
        stderr: out.stderr,
    })
}

/// [`check_compile`] over many mutants on a pool of `workers` threads.
/// Results keep input order; a missing compiler aborts the whole run.
pub fn check_compile_all(
    mutants: &[Mutant],
    command: &CommandTemplate,
    file_name: &str,
    timeout: Duration,
    workers: usize,
) -> Result<Vec<CompileResult>, ProcessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ProcessError::Io { program: command.program().to_string(), source: std::io::Error::other(e) })?;
    pool.install(|| {
        mutants
            .par_iter()
            .map(|m| check_compile(m, command, file_name, timeout))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidityLedger {
    pub bug_id: String,
    /// Expected number of mutants (one per chunk line).
    pub expected: usize,
    /// Set A, in generation order.
    pub generated: Vec<String>,
    /// Set D.
    pub duplicates: BTreeSet<String>,
    /// Set C.
    pub compilable: BTreeSet<String>,
    /// Compile attempts cut off by the timeout; never in C.
    pub timeouts: BTreeSet<String>,
}

impl ValidityLedger {
    /// Folds dedup and compile results into a ledger. Mutants in `generated`
    /// with no compile result (for instance rejected at materialization)
    /// stay in A but in neither C nor D.
    pub fn assemble(
        bug_id: &str,
        expected: usize,
        generated: Vec<String>,
        partition: &DuplicatePartition,
        compiled: &[CompileResult],
    ) -> Self {
        let in_a: BTreeSet<&str> = generated.iter().map(String::as_str).collect();
        let keep = |id: &String| in_a.contains(id.as_str());
        Self {
            bug_id: bug_id.to_string(),
            expected,
            duplicates: partition.duplicates.iter().map(|d| &d.id).filter(|id| keep(id)).cloned().collect(),
            compilable: compiled.iter().filter(|c| c.compiled && keep(&c.mutant_id)).map(|c| c.mutant_id.clone()).collect(),
            timeouts: compiled.iter().filter(|c| c.timed_out && keep(&c.mutant_id)).map(|c| c.mutant_id.clone()).collect(),
            generated,
        }
    }

    /// Mutants in `C − D`, in generation order.
    pub fn useful(&self) -> Vec<String> {
        self.generated
            .iter()
            .filter(|id| self.compilable.contains(*id) && !self.duplicates.contains(*id))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidityMetrics {
    /// `|A| / Exp`; exceeds 1 on over-generation. Absent when Exp is 0.
    pub generation_rate: Option<f64>,
    /// `|A − D| / |A|`; absent when A is empty.
    pub nonduplicate_rate: Option<f64>,
    /// `|C| / |A|`; absent when A is empty.
    pub compilable_rate: Option<f64>,
}

pub fn generation_rate(expected: usize, generated: usize) -> Option<f64> {
    (expected > 0).then(|| generated as f64 / expected as f64)
}

fn rates(expected: usize, a: usize, d: usize, c: usize) -> ValidityMetrics {
    let frac = |num: usize| (a > 0).then(|| num as f64 / a as f64);
    ValidityMetrics {
        generation_rate: generation_rate(expected, a),
        nonduplicate_rate: frac(a - d),
        compilable_rate: frac(c),
    }
}

pub fn validity_metrics(ledger: &ValidityLedger) -> ValidityMetrics {
    rates(ledger.expected, ledger.generated.len(), ledger.duplicates.len(), ledger.compilable.len())
}

/// Rates over the union of all ledgers (pooled counts, not a mean of rates).
pub fn pooled_metrics(ledgers: &[ValidityLedger]) -> ValidityMetrics {
    let sum = |f: fn(&ValidityLedger) -> usize| ledgers.iter().map(f).sum::<usize>();
    rates(
        sum(|l| l.expected),
        sum(|l| l.generated.len()),
        sum(|l| l.duplicates.len()),
        sum(|l| l.compilable.len()),
    )
}

pub fn fmt_pct(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |v| format!("{:.2}%", v * 100.0))
}

/// Fixed-width per-bug table with a pooled total row.
pub fn render_validity_table(ledgers: &[ValidityLedger]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>8} {:>8} {:>9} {:>9} {:>9} {:>8}", "bug", "Exp", "Gen", "Ge.R.", "ND.R.", "Com.R.", "T/O");
    let mut row = |name: &str, exp: usize, gen: usize, m: ValidityMetrics, to: usize| {
        let _ = writeln!(
            out,
            "{:<24} {:>8} {:>8} {:>9} {:>9} {:>9} {:>8}",
            name,
            exp,
            gen,
            fmt_pct(m.generation_rate),
            fmt_pct(m.nonduplicate_rate),
            fmt_pct(m.compilable_rate),
            to
        );
    };
    for l in ledgers {
        row(&l.bug_id, l.expected, l.generated.len(), validity_metrics(l), l.timeouts.len());
    }
    row(
        "TOTAL",
        ledgers.iter().map(|l| l.expected).sum(),
        ledgers.iter().map(|l| l.generated.len()).sum(),
        pooled_metrics(ledgers),
        ledgers.iter().map(|l| l.timeouts.len()).sum(),
    );
    out
}

/// Whether `program` can be launched from `PATH`.
pub fn program_available(program: &str) -> bool {
    std::env::var_os("PATH").is_some_and(|paths| std::env::split_paths(&paths).any(|d| Path::new(&d).join(program).is_file()))
}
