//! Test execution and kill matrices.
//!
//! A test runner is any command that prints one `<test-id> PASS|FAIL` line
//! per test; other output lines are ignored. A mutant kills a test when the
//! test's status on the mutant differs from its status on the original.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::process::{run_command, CommandTemplate, ProcessError};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("ambiguous outcome: test `{test}` reported more than once")]
    AmbiguousOutcome { test: String },
    #[error("runner crashed on {program}: no status lines{}", if detail.is_empty() { String::new() } else { format!(" ({detail})") })]
    RunnerCrashed { program: String, detail: String },
    #[error("test ids of {program} differ from the original: {detail}")]
    TestIdMismatch { program: String, detail: String },
    #[error("duplicate program id `{0}`")]
    DuplicateProgram(String),
    #[error("id `{0}` cannot be written to a matrix file")]
    BadId(String),
    #[error("malformed matrix file {path}: {detail}")]
    MalformedMatrix { path: String, detail: String },
    #[error("unknown {what} `{id}`")]
    UnknownId { what: &'static str, id: String },
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExecError + '_ {
    move |source| ExecError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    pub fn is_fail(self) -> bool {
        self == Outcome::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TestOutcomeVector {
    pub program_id: String,
    pub outcomes: BTreeMap<String, Outcome>,
    /// The run was cut off by its timeout.
    #[serde(default)]
    pub timed_out: bool,
    /// Tests that produced no status line and were recorded as FAIL.
    #[serde(default)]
    pub missing: BTreeSet<String>,
}

impl TestOutcomeVector {
    pub fn new(program_id: &str, outcomes: BTreeMap<String, Outcome>) -> Self {
        Self { program_id: program_id.to_string(), outcomes, ..Self::default() }
    }

    pub fn failing(&self) -> BTreeSet<&str> {
        self.outcomes.iter().filter(|(_, o)| o.is_fail()).map(|(t, _)| t.as_str()).collect()
    }

    pub fn test_ids(&self) -> BTreeSet<&str> {
        self.outcomes.keys().map(String::as_str).collect()
    }

    /// Runner-protocol text, one line per test in id order.
    pub fn to_protocol(&self) -> String {
        let mut out = String::new();
        for (t, o) in &self.outcomes {
            let _ = writeln!(out, "{t} {}", if o.is_fail() { "FAIL" } else { "PASS" });
        }
        out
    }
}

/// Extracts status lines from runner output.
pub fn parse_runner_output(text: &str) -> Result<BTreeMap<String, Outcome>, ExecError> {
    let mut outcomes = BTreeMap::new();
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        let (Some(id), Some(status), None) = (parts.next(), parts.next(), parts.next()) else {
            continue;
        };
        let outcome = match status {
            "PASS" => Outcome::Pass,
            "FAIL" => Outcome::Fail,
            _ => continue,
        };
        if outcomes.insert(id.to_string(), outcome).is_some() {
            return Err(ExecError::AmbiguousOutcome { test: id.to_string() });
        }
    }
    Ok(outcomes)
}

/// Reads a runner-protocol file; the program id is the file stem.
pub fn load_outcome_file(path: &Path) -> Result<TestOutcomeVector, ExecError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let program = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let outcomes = parse_runner_output(&text)?;
    if outcomes.is_empty() {
        return Err(ExecError::RunnerCrashed { program, detail: path.display().to_string() });
    }
    Ok(TestOutcomeVector::new(&program, outcomes))
}

/// Where and how a program variant is tested.
#[derive(Debug, Clone)]
pub struct SuiteSpec {
    /// Copied into a fresh directory for every run when present.
    pub project_dir: Option<PathBuf>,
    /// Where the program source is written, relative to the run directory.
    pub source_path: PathBuf,
    pub command: CommandTemplate,
    pub timeout: Duration,
}

#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub vector: TestOutcomeVector,
    pub elapsed: Duration,
    pub stderr: String,
}

fn copy_tree(from: &Path, to: &Path) -> io::Result<()> {
    fs::create_dir_all(to)?;
    for entry in fs::read_dir(from)? {
        let entry = entry?;
        let dest = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_tree(&entry.path(), &dest)?;
        } else {
            fs::copy(entry.path(), dest)?;
        }
    }
    Ok(())
}

/// Runs the suite against `source` in an isolated directory.
///
/// With `expected` tests known, tests missing from the output (timeout or
/// partial output) are recorded as FAIL and listed in `missing`. Output
/// without any status line is a runner crash unless the run timed out and
/// the expected tests are known.
pub fn run_suite(
    program_id: &str,
    source: &str,
    spec: &SuiteSpec,
    timeout: Duration,
    expected: Option<&BTreeSet<String>>,
) -> Result<SuiteRun, ExecError> {
    let dir = tempfile::tempdir().map_err(io_err(Path::new("tempdir")))?;
    let work = dir.path().join("work");
    match &spec.project_dir {
        Some(p) => copy_tree(p, &work).map_err(io_err(p))?,
        None => fs::create_dir_all(&work).map_err(io_err(&work))?,
    }
    let src = work.join(&spec.source_path);
    if let Some(parent) = src.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(&src, source).map_err(io_err(&src))?;

    let out = run_command(&spec.command.render(&src, &work), &work, timeout)?;
    let mut outcomes = parse_runner_output(&out.stdout)?;
    if outcomes.is_empty() && !(out.timed_out && expected.is_some()) {
        let detail = if out.timed_out { "timed out".to_string() } else { out.stderr.trim().chars().take(200).collect() };
        return Err(ExecError::RunnerCrashed { program: program_id.to_string(), detail });
    }
    let mut missing = BTreeSet::new();
    for t in expected.into_iter().flatten() {
        if !outcomes.contains_key(t) {
            outcomes.insert(t.clone(), Outcome::Fail);
            missing.insert(t.clone());
        }
    }
    Ok(SuiteRun {
        vector: TestOutcomeVector {
            program_id: program_id.to_string(),
            outcomes,
            timed_out: out.timed_out,
            missing,
        },
        elapsed: out.elapsed,
        stderr: out.stderr,
    })
}

/// Twice the original suite's wall time, never below `floor`.
pub fn mutant_timeout(original: Duration, floor: Duration) -> Duration {
    (original * 2).max(floor)
}

/// Runs every mutant on `workers` threads. The per-mutant timeout is
/// derived from the original run; results keep input order.
pub fn run_mutants(
    mutants: &[(String, String)],
    spec: &SuiteSpec,
    original: &SuiteRun,
    timeout_floor: Duration,
    workers: usize,
) -> Result<Vec<Result<SuiteRun, ExecError>>, ExecError> {
    let expected: BTreeSet<String> = original.vector.outcomes.keys().cloned().collect();
    let timeout = mutant_timeout(original.elapsed, timeout_floor);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExecError::Io { path: "thread pool".into(), source: io::Error::other(e) })?;
    Ok(pool.install(|| {
        mutants
            .par_iter()
            .map(|(id, src)| run_suite(id, src, spec, timeout, Some(&expected)))
            .collect()
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KillMatrix {
    pub bug_id: String,
    mutants: Vec<String>,
    tests: Vec<String>,
    cells: Vec<Vec<bool>>,
}

impl KillMatrix {
    /// Rows and columns are re-sorted by id; `cells[i][j]` belongs to
    /// `mutants[i]` and `tests[j]` as given.
    pub fn new(bug_id: &str, mutants: Vec<String>, tests: Vec<String>, cells: Vec<Vec<bool>>) -> Result<Self, ExecError> {
        let bad = |detail: String| ExecError::MalformedMatrix { path: bug_id.to_string(), detail };
        if cells.len() != mutants.len() {
            return Err(bad(format!("{} rows for {} mutants", cells.len(), mutants.len())));
        }
        if let Some(r) = cells.iter().position(|r| r.len() != tests.len()) {
            return Err(bad(format!("row {} has {} cells for {} tests", r + 1, cells[r].len(), tests.len())));
        }
        for ids in [&mutants, &tests] {
            let unique: BTreeSet<&String> = ids.iter().collect();
            if unique.len() != ids.len() {
                let dup = ids.iter().find(|id| ids.iter().filter(|x| x == id).count() > 1).unwrap();
                return Err(ExecError::DuplicateProgram(dup.clone()));
            }
        }
        let mut row_order: Vec<usize> = (0..mutants.len()).collect();
        row_order.sort_by(|&a, &b| mutants[a].cmp(&mutants[b]));
        let mut col_order: Vec<usize> = (0..tests.len()).collect();
        col_order.sort_by(|&a, &b| tests[a].cmp(&tests[b]));
        Ok(Self {
            bug_id: bug_id.to_string(),
            cells: row_order.iter().map(|&r| col_order.iter().map(|&c| cells[r][c]).collect()).collect(),
            mutants: row_order.iter().map(|&r| mutants[r].clone()).collect(),
            tests: col_order.iter().map(|&c| tests[c].clone()).collect(),
        })
    }

    pub fn mutants(&self) -> &[String] {
        &self.mutants
    }

    pub fn tests(&self) -> &[String] {
        &self.tests
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.cells
    }

    pub fn is_empty(&self) -> bool {
        self.mutants.is_empty()
    }

    pub fn mutant_index(&self, id: &str) -> Option<usize> {
        self.mutants.iter().position(|m| m == id)
    }

    pub fn test_index(&self, id: &str) -> Option<usize> {
        self.tests.iter().position(|t| t == id)
    }

    pub fn kill(&self, mutant: &str, test: &str) -> Option<bool> {
        Some(self.cells[self.mutant_index(mutant)?][self.test_index(test)?])
    }

    /// Tests killing `mutant`.
    pub fn killing_tests(&self, mutant: &str) -> Option<BTreeSet<&str>> {
        let row = &self.cells[self.mutant_index(mutant)?];
        Some(self.tests.iter().zip(row).filter(|(_, &k)| k).map(|(t, _)| t.as_str()).collect())
    }

    pub fn is_killed(&self, mutant: &str) -> Option<bool> {
        Some(self.cells[self.mutant_index(mutant)?].iter().any(|&k| k))
    }

    pub fn killed_mutants(&self) -> BTreeSet<&str> {
        self.mutants
            .iter()
            .zip(&self.cells)
            .filter(|(_, r)| r.iter().any(|&k| k))
            .map(|(m, _)| m.as_str())
            .collect()
    }

    /// Mutants killed by `test`.
    pub fn killed_by(&self, test: &str) -> Option<BTreeSet<&str>> {
        let j = self.test_index(test)?;
        Some(self.mutants.iter().zip(&self.cells).filter(|(_, r)| r[j]).map(|(m, _)| m.as_str()).collect())
    }

    /// Restricts to the given mutants, keeping canonical order.
    pub fn select_mutants(&self, keep: &BTreeSet<String>) -> Self {
        let (mutants, cells) = self
            .mutants
            .iter()
            .zip(&self.cells)
            .filter(|(m, _)| keep.contains(*m))
            .map(|(m, r)| (m.clone(), r.clone()))
            .unzip();
        Self { bug_id: self.bug_id.clone(), mutants, tests: self.tests.clone(), cells }
    }

    /// Columns rearranged into `order`, which must be a permutation of the
    /// test ids. Cells follow ids, not positions.
    pub fn with_test_order(&self, order: &[String]) -> Result<(Vec<String>, Vec<Vec<bool>>), ExecError> {
        let given: BTreeSet<&String> = order.iter().collect();
        let have: BTreeSet<&String> = self.tests.iter().collect();
        if given != have || order.len() != self.tests.len() {
            return Err(ExecError::TestIdMismatch {
                program: self.bug_id.clone(),
                detail: "requested order is not a permutation of the matrix tests".into(),
            });
        }
        let idx: Vec<usize> = order.iter().map(|t| self.test_index(t).unwrap()).collect();
        Ok((order.to_vec(), self.cells.iter().map(|r| idx.iter().map(|&j| r[j]).collect()).collect()))
    }
}

fn describe_diff(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> String {
    let only_a: Vec<&&str> = a.difference(b).take(5).collect();
    let only_b: Vec<&&str> = b.difference(a).take(5).collect();
    format!("missing {only_a:?}, unexpected {only_b:?}")
}

/// `kill(m, t)` is true iff `t` has a different status on `m` than on the
/// original.
pub fn build_kill_matrix(
    bug_id: &str,
    original: &TestOutcomeVector,
    mutants: &[TestOutcomeVector],
) -> Result<KillMatrix, ExecError> {
    let tests: Vec<String> = original.outcomes.keys().cloned().collect();
    let expected = original.test_ids();
    let mut cells = Vec::with_capacity(mutants.len());
    for m in mutants {
        let got = m.test_ids();
        if got != expected {
            return Err(ExecError::TestIdMismatch { program: m.program_id.clone(), detail: describe_diff(&expected, &got) });
        }
        cells.push(tests.iter().map(|t| m.outcomes[t] != original.outcomes[t]).collect());
    }
    KillMatrix::new(bug_id, mutants.iter().map(|m| m.program_id.clone()).collect(), tests, cells)
}

fn check_id(id: &str) -> Result<(), ExecError> {
    if id.is_empty() || id.contains(char::is_whitespace) {
        return Err(ExecError::BadId(id.to_string()));
    }
    Ok(())
}

pub fn render_matrix(m: &KillMatrix) -> Result<String, ExecError> {
    let mut out = String::from("MUTANTS");
    for id in &m.mutants {
        check_id(id)?;
        out.push(' ');
        out.push_str(id);
    }
    out.push_str("\nTESTS");
    for id in &m.tests {
        check_id(id)?;
        out.push(' ');
        out.push_str(id);
    }
    out.push('\n');
    for row in &m.cells {
        out.extend(row.iter().map(|&k| if k { '1' } else { '0' }));
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_matrix(text: &str, bug_id: &str) -> Result<KillMatrix, ExecError> {
    let bad = |detail: &str| ExecError::MalformedMatrix { path: bug_id.to_string(), detail: detail.to_string() };
    if text.trim().is_empty() {
        return Err(bad("empty file"));
    }
    let mut lines = text.lines();
    let header = |line: Option<&str>, tag: &str| -> Result<Vec<String>, ExecError> {
        let line = line.ok_or_else(|| bad(&format!("missing {tag} header")))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(tag) {
            return Err(bad(&format!("expected {tag} header")));
        }
        Ok(parts.map(str::to_string).collect())
    };
    let mutants = header(lines.next(), "MUTANTS")?;
    let tests = header(lines.next(), "TESTS")?;
    let mut cells = Vec::new();
    for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let row = line
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(bad(&format!("row {}: unexpected `{other}`", i + 1))),
            })
            .collect::<Result<Vec<bool>, _>>()?;
        cells.push(row);
    }
    KillMatrix::new(bug_id, mutants, tests, cells)
}

pub fn save_matrix(m: &KillMatrix, path: &Path) -> Result<(), ExecError> {
    fs::write(path, render_matrix(m)?).map_err(io_err(path))
}

/// Loads a matrix file; the bug id is the file stem.
pub fn load_matrix(path: &Path) -> Result<KillMatrix, ExecError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bug = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_matrix(&text, &bug).map_err(|e| match e {
        ExecError::MalformedMatrix { detail, .. } => ExecError::MalformedMatrix { path: path.display().to_string(), detail },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector(id: &str, spec: &[(&str, Outcome)]) -> TestOutcomeVector {
        TestOutcomeVector::new(id, spec.iter().map(|(t, o)| (t.to_string(), *o)).collect())
    }

    use Outcome::{Fail, Pass};

    #[test]
    fn parses_status_lines_and_skips_noise() {
        let o = parse_runner_output("t1 PASS\nsome log line\nt2 FAIL\n  \nt3 maybe\n").unwrap();
        assert_eq!(o.len(), 2);
        assert_eq!(o["t1"], Pass);
        assert_eq!(o["t2"], Fail);
    }

    #[test]
    fn duplicate_status_is_ambiguous() {
        let e = parse_runner_output("t1 PASS\nt1 PASS\n").unwrap_err();
        assert!(e.to_string().contains("ambiguous outcome"));
    }

    #[test]
    fn identical_vector_gives_surviving_row() {
        let orig = vector("orig", &[("t1", Pass), ("t2", Pass)]);
        let m = build_kill_matrix("b", &orig, &[vector("m1", &[("t1", Pass), ("t2", Pass)])]).unwrap();
        assert_eq!(m.rows(), &[vec![false, false]]);
        assert_eq!(m.is_killed("m1"), Some(false));
    }

    #[test]
    fn flipped_test_is_the_only_kill() {
        let orig = vector("orig", &[("t1", Pass), ("t2", Pass), ("t3", Pass)]);
        let m = build_kill_matrix("b", &orig, &[vector("m1", &[("t1", Pass), ("t2", Fail), ("t3", Pass)])]).unwrap();
        assert_eq!(m.rows(), &[vec![false, true, false]]);
        assert_eq!(m.killing_tests("m1").unwrap(), BTreeSet::from(["t2"]));
    }

    #[test]
    fn passing_a_failing_original_test_is_a_kill() {
        let orig = vector("orig", &[("t1", Fail), ("t2", Pass)]);
        let m = build_kill_matrix("b", &orig, &[vector("m1", &[("t1", Pass), ("t2", Pass)])]).unwrap();
        assert_eq!(m.kill("m1", "t1"), Some(true));
        assert_eq!(m.kill("m1", "t2"), Some(false));
    }

    #[test]
    fn mismatched_test_ids_rejected() {
        let orig = vector("orig", &[("t1", Pass)]);
        let e = build_kill_matrix("b", &orig, &[vector("m1", &[("t9", Pass)])]).unwrap_err();
        assert!(matches!(e, ExecError::TestIdMismatch { .. }));
    }

    #[test]
    fn rows_and_columns_are_keyed_by_id() {
        let orig = vector("orig", &[("a", Pass), ("b", Pass)]);
        let ms = [vector("z", &[("a", Fail), ("b", Pass)]), vector("y", &[("a", Pass), ("b", Fail)])];
        let mut rev = ms.clone();
        rev.reverse();
        let m1 = build_kill_matrix("bug", &orig, &ms).unwrap();
        assert_eq!(m1, build_kill_matrix("bug", &orig, &rev).unwrap());
        assert_eq!(m1.mutants(), ["y", "z"]);
        assert_eq!(m1.killed_by("a").unwrap(), BTreeSet::from(["z"]));
    }

    #[test]
    fn permuted_header_follows_ids() {
        let text = "MUTANTS m2 m1\nTESTS tb ta\n10\n01\n";
        let m = parse_matrix(text, "bug").unwrap();
        assert_eq!(m.kill("m2", "tb"), Some(true));
        assert_eq!(m.kill("m1", "ta"), Some(true));
        assert_eq!(m.kill("m1", "tb"), Some(false));
        assert_eq!(render_matrix(&m).unwrap(), "MUTANTS m1 m2\nTESTS ta tb\n10\n01\n");
        let (order, cells) = m.with_test_order(&["tb".into(), "ta".into()]).unwrap();
        assert_eq!(order, ["tb", "ta"]);
        assert_eq!(cells, vec![vec![false, true], vec![true, false]]);
        assert!(m.with_test_order(&["ta".into()]).is_err());
    }

    #[test]
    fn malformed_matrix_files() {
        assert!(parse_matrix("", "b").is_err());
        assert!(parse_matrix("MUTANTS a\nTESTS t\n2\n", "b").is_err());
        assert!(parse_matrix("MUTANTS a\nTESTS t u\n1\n", "b").is_err());
        assert!(parse_matrix("TESTS t\nMUTANTS a\n1\n", "b").is_err());
        assert!(parse_matrix("MUTANTS a a\nTESTS t\n1\n0\n", "b").is_err());
    }

    #[test]
    fn timeout_floor() {
        assert_eq!(mutant_timeout(Duration::from_millis(10), Duration::from_secs(1)), Duration::from_secs(1));
        assert_eq!(mutant_timeout(Duration::from_secs(3), Duration::from_secs(1)), Duration::from_secs(6));
    }
}
