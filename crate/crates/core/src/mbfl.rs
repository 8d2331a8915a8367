//! Mutation-based fault localization with MUSE and Metallaxis.
//!
//! Runs happen on the buggy version. For a mutant `m`, `failed(m)` counts
//! tests failing on the original that pass on `m`, and `passed(m)` counts
//! tests passing on the original that fail on `m`. Statements are physical
//! line numbers of the buggy source.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::execution::{KillMatrix, TestOutcomeVector};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MbflError {
    #[error("no test fails on the original program")]
    NoFailingTest,
    #[error("mutant `{0}` has no statement")]
    UnmappedMutant(String),
    #[error("mutant `{0}` was run on a different test set than the original")]
    TestIdMismatch(String),
    #[error("failing test `{0}` is not in the kill matrix")]
    UnknownTest(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutantFlStats {
    pub mutant_id: String,
    pub statement: usize,
    /// Originally failing tests that pass on the mutant.
    pub failed: usize,
    /// Originally passing tests that fail on the mutant.
    pub passed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlGlobals {
    pub total_failed: usize,
    /// Sum of `failed` over all mutants.
    pub f2p: usize,
    /// Sum of `passed` over all mutants.
    pub p2f: usize,
}

fn globals(total_failed: usize, stats: &[MutantFlStats]) -> FlGlobals {
    FlGlobals {
        total_failed,
        f2p: stats.iter().map(|s| s.failed).sum(),
        p2f: stats.iter().map(|s| s.passed).sum(),
    }
}

/// Flip counts from raw outcome vectors.
pub fn fl_stats(
    original: &TestOutcomeVector,
    mutants: &[TestOutcomeVector],
    statements: &BTreeMap<String, usize>,
) -> Result<(Vec<MutantFlStats>, FlGlobals), MbflError> {
    let total_failed = original.failing().len();
    if total_failed == 0 {
        return Err(MbflError::NoFailingTest);
    }
    let mut stats = Vec::with_capacity(mutants.len());
    for m in mutants {
        let statement = *statements.get(&m.program_id).ok_or_else(|| MbflError::UnmappedMutant(m.program_id.clone()))?;
        if m.test_ids() != original.test_ids() {
            return Err(MbflError::TestIdMismatch(m.program_id.clone()));
        }
        let (mut failed, mut passed) = (0, 0);
        for (t, o) in &original.outcomes {
            match (o.is_fail(), m.outcomes[t].is_fail()) {
                (true, false) => failed += 1,
                (false, true) => passed += 1,
                _ => {}
            }
        }
        stats.push(MutantFlStats { mutant_id: m.program_id.clone(), statement, failed, passed });
    }
    let g = globals(total_failed, &stats);
    Ok((stats, g))
}

/// Flip counts from a buggy-version kill matrix and the tests failing on
/// the original: a kill in a failing column is a fail-to-pass flip.
pub fn fl_stats_from_matrix(
    matrix: &KillMatrix,
    original_failing: &BTreeSet<String>,
    statements: &BTreeMap<String, usize>,
) -> Result<(Vec<MutantFlStats>, FlGlobals), MbflError> {
    if original_failing.is_empty() {
        return Err(MbflError::NoFailingTest);
    }
    if let Some(t) = original_failing.iter().find(|t| matrix.test_index(t).is_none()) {
        return Err(MbflError::UnknownTest(t.clone()));
    }
    let failing: Vec<bool> = matrix.tests().iter().map(|t| original_failing.contains(t)).collect();
    let mut stats = Vec::with_capacity(matrix.mutants().len());
    for (m, row) in matrix.mutants().iter().zip(matrix.rows()) {
        let statement = *statements.get(m).ok_or_else(|| MbflError::UnmappedMutant(m.clone()))?;
        let failed = row.iter().zip(&failing).filter(|(&k, &f)| k && f).count();
        let passed = row.iter().zip(&failing).filter(|(&k, &f)| k && !f).count();
        stats.push(MutantFlStats { mutant_id: m.clone(), statement, failed, passed });
    }
    let g = globals(original_failing.len(), &stats);
    Ok((stats, g))
}

/// `failed − (f2p/p2f)·passed`, with the penalty dropped when `p2f` is 0.
pub fn muse_score(s: &MutantFlStats, g: &FlGlobals) -> f64 {
    let penalty = if g.p2f == 0 { 0.0 } else { g.f2p as f64 / g.p2f as f64 * s.passed as f64 };
    s.failed as f64 - penalty
}

/// `failed / sqrt(totalfailed·(failed + passed))`, 0 when the denominator is.
pub fn metallaxis_score(s: &MutantFlStats, total_failed: usize) -> f64 {
    let den = (total_failed * (s.failed + s.passed)) as f64;
    if den == 0.0 {
        0.0
    } else {
        s.failed as f64 / den.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Muse,
    Metallaxis,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Muse, Method::Metallaxis];

    pub fn score(self, s: &MutantFlStats, g: &FlGlobals) -> f64 {
        match self {
            Method::Muse => muse_score(s, g),
            Method::Metallaxis => metallaxis_score(s, g.total_failed),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Muse => "MUSE",
            Method::Metallaxis => "Metallaxis",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "muse" => Ok(Method::Muse),
            "metallaxis" => Ok(Method::Metallaxis),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

/// Per-statement suspiciousness: mean of mutant scores for MUSE, maximum
/// for Metallaxis. Statements in `universe` without mutants score 0.
pub fn aggregate(scores: &[(usize, f64)], universe: &BTreeSet<usize>, method: Method) -> BTreeMap<usize, f64> {
    let mut groups: BTreeMap<usize, Vec<f64>> = universe.iter().map(|&s| (s, Vec::new())).collect();
    for &(stmt, v) in scores {
        groups.entry(stmt).or_default().push(v);
    }
    groups
        .into_iter()
        .map(|(stmt, vs)| {
            let v = match (method, vs.is_empty()) {
                (_, true) => 0.0,
                (Method::Muse, false) => vs.iter().sum::<f64>() / vs.len() as f64,
                (Method::Metallaxis, false) => vs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            (stmt, v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedStatement {
    pub statement: usize,
    pub score: f64,
    /// Expected inspection rank; tied statements share the group midpoint.
    pub rank: f64,
}

/// Descending by score; a tie group of size `g` starting at 1-based
/// position `a` gets rank `a + (g − 1)/2`. Within a group, statements are
/// listed by line number.
pub fn rank(scores: &BTreeMap<usize, f64>) -> Vec<RankedStatement> {
    let mut items: Vec<(usize, f64)> = scores.iter().map(|(&s, &v)| (s, v)).collect();
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out = Vec::with_capacity(items.len());
    let mut start = 0;
    while start < items.len() {
        let end = items[start..].iter().position(|x| x.1 != items[start].1).map_or(items.len(), |p| start + p);
        let rank = (start + 1) as f64 + (end - start - 1) as f64 / 2.0;
        out.extend(items[start..end].iter().map(|&(statement, score)| RankedStatement { statement, score, rank }));
        start = end;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspiciousnessReport {
    pub bug_id: String,
    pub method: Method,
    pub ranked: Vec<RankedStatement>,
    pub faulty: BTreeSet<usize>,
}

impl SuspiciousnessReport {
    pub fn rank_of(&self, statement: usize) -> Option<f64> {
        self.ranked.iter().find(|r| r.statement == statement).map(|r| r.rank)
    }
}

pub fn localize(
    bug_id: &str,
    stats: &[MutantFlStats],
    g: &FlGlobals,
    universe: &BTreeSet<usize>,
    faulty: &BTreeSet<usize>,
    method: Method,
) -> SuspiciousnessReport {
    let scores: Vec<(usize, f64)> = stats.iter().map(|s| (s.statement, method.score(s, g))).collect();
    SuspiciousnessReport {
        bug_id: bug_id.to_string(),
        method,
        ranked: rank(&aggregate(&scores, universe, method)),
        faulty: faulty.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlMetrics {
    /// `(k, bugs whose best faulty rank is at most k)`.
    pub top_k: Vec<(usize, usize)>,
    /// Mean over bugs of the best faulty rank.
    pub mfr: Option<f64>,
    /// Mean over bugs of the mean rank of all faulty statements.
    pub mar: Option<f64>,
    /// Mean over bugs of the first faulty rank; equal to `mfr`, kept as a
    /// separately labelled figure for the literal reading of MAR.
    pub mar_first_rank: Option<f64>,
    pub evaluated_bugs: usize,
    /// Bugs with no faulty statement in their ranking.
    pub excluded_bugs: usize,
    /// Faulty statements absent from their bug's ranking.
    pub missing_faulty_statements: usize,
}

pub const DEFAULT_KS: [usize; 3] = [1, 3, 5];

pub fn fl_metrics(reports: &[SuspiciousnessReport], ks: &[usize]) -> FlMetrics {
    let mut firsts = Vec::new();
    let mut avgs = Vec::new();
    let (mut excluded, mut missing) = (0, 0);
    for r in reports {
        let ranks: Vec<f64> = r.faulty.iter().filter_map(|&s| r.rank_of(s)).collect();
        missing += r.faulty.len() - ranks.len();
        if ranks.is_empty() {
            excluded += 1;
            continue;
        }
        firsts.push(ranks.iter().copied().fold(f64::INFINITY, f64::min));
        avgs.push(ranks.iter().sum::<f64>() / ranks.len() as f64);
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    FlMetrics {
        top_k: ks.iter().map(|&k| (k, firsts.iter().filter(|&&f| f <= k as f64).count())).collect(),
        mfr: mean(&firsts),
        mar: mean(&avgs),
        mar_first_rank: mean(&firsts),
        evaluated_bugs: firsts.len(),
        excluded_bugs: excluded,
        missing_faulty_statements: missing,
    }
}

pub fn render_fl_table(rows: &[(Method, FlMetrics)]) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
    let mut out = String::new();
    let ks: Vec<usize> = rows.first().map(|(_, m)| m.top_k.iter().map(|x| x.0).collect()).unwrap_or_default();
    let _ = write!(out, "{:<12}", "method");
    for k in &ks {
        let _ = write!(out, " {:>7}", format!("Top-{k}"));
    }
    let _ = writeln!(out, " {:>8} {:>8} {:>9} {:>8}", "MAR", "MFR", "MAR(1st)", "excluded");
    for (method, m) in rows {
        let _ = write!(out, "{:<12}", method.to_string());
        for (_, c) in &m.top_k {
            let _ = write!(out, " {c:>7}");
        }
        let _ = writeln!(out, " {:>8} {:>8} {:>9} {:>8}", opt(m.mar), opt(m.mfr), opt(m.mar_first_rank), m.excluded_bugs);
    }
    out
}
