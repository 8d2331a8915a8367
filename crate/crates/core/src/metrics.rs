//! Mutant effectiveness against real bugs: mutation score, Ochiai
//! similarity, average Ochiai coefficient (AOC), real-bug detection and
//! coupling.
//!
//! All functions take a [`BugContext`] whose kill matrix rows are the
//! bug's useful mutants (`C − D`) run on the fixed version, so the tests
//! killing a mutant are exactly the tests failing on it.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::execution::KillMatrix;

pub const HIGH_SIMILARITY: f64 = 0.8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("bug {0} has no useful mutants")]
    NoMutants(String),
    #[error("bug {bug}: revealing test `{test}` is not in the kill matrix")]
    UnknownRevealingTest { bug: String, test: String },
    #[error("bug {0} has no bug-revealing tests")]
    NoRevealingTests(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BugContext {
    pub bug_id: String,
    /// Tests failing on the buggy version.
    pub bug_revealing_tests: BTreeSet<String>,
    pub matrix: KillMatrix,
}

impl BugContext {
    pub fn new(matrix: KillMatrix, bug_revealing_tests: BTreeSet<String>) -> Result<Self, MetricsError> {
        if let Some(t) = bug_revealing_tests.iter().find(|t| matrix.test_index(t).is_none()) {
            return Err(MetricsError::UnknownRevealingTest { bug: matrix.bug_id.clone(), test: t.clone() });
        }
        Ok(Self { bug_id: matrix.bug_id.clone(), bug_revealing_tests, matrix })
    }

    pub fn useful_mutants(&self) -> &[String] {
        self.matrix.mutants()
    }

    fn revealing_columns(&self) -> Vec<usize> {
        self.bug_revealing_tests.iter().filter_map(|t| self.matrix.test_index(t)).collect()
    }

    fn require_mutants(&self) -> Result<(), MetricsError> {
        if self.matrix.is_empty() {
            Err(MetricsError::NoMutants(self.bug_id.clone()))
        } else {
            Ok(())
        }
    }
}

/// `|K| / |C − D|`.
pub fn mutation_score(ctx: &BugContext) -> Result<f64, MetricsError> {
    ctx.require_mutants()?;
    Ok(ctx.matrix.killed_mutants().len() as f64 / ctx.matrix.mutants().len() as f64)
}

/// `|a ∩ b| / sqrt(|a|·|b|)`, and 0 when either set is empty.
pub fn ochiai<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let common = a.intersection(b).count() as f64;
    common / ((a.len() as f64) * (b.len() as f64)).sqrt()
}

/// Per-mutant Ochiai against the bug's failing tests, in row order.
pub fn mutant_ochiai(ctx: &BugContext) -> Vec<f64> {
    let fb: BTreeSet<&str> = ctx.bug_revealing_tests.iter().map(String::as_str).collect();
    ctx.matrix
        .mutants()
        .iter()
        .map(|m| ochiai(&ctx.matrix.killing_tests(m).unwrap_or_default(), &fb))
        .collect()
}

/// Mean Ochiai over the bug's useful mutants; absent without mutants.
pub fn bug_ochiai(ctx: &BugContext) -> Option<f64> {
    let values = mutant_ochiai(ctx);
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean over bugs with a defined value; absent when there are none.
pub fn aoc(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Mean over all bugs, counting undefined bugs as 0.
pub fn aoc_zero_filled(values: &[Option<f64>]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().map(|v| v.unwrap_or(0.0)).sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionCount {
    /// Revealing tests killing at least one mutant.
    pub detecting: usize,
    pub revealing: usize,
}

impl DetectionCount {
    pub fn rate(&self) -> f64 {
        self.detecting as f64 / self.revealing as f64
    }
}

pub fn bug_detection(ctx: &BugContext) -> Result<DetectionCount, MetricsError> {
    if ctx.bug_revealing_tests.is_empty() {
        return Err(MetricsError::NoRevealingTests(ctx.bug_id.clone()));
    }
    let detecting = ctx
        .revealing_columns()
        .into_iter()
        .filter(|&j| ctx.matrix.rows().iter().any(|r| r[j]))
        .count();
    Ok(DetectionCount { detecting, revealing: ctx.bug_revealing_tests.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealBugDetection {
    /// Unweighted mean of per-bug rates.
    pub macro_avg: f64,
    /// Detecting tests over revealing tests, pooled across bugs.
    pub micro_avg: f64,
}

pub fn real_bug_detection(ctxs: &[BugContext]) -> Result<Option<RealBugDetection>, MetricsError> {
    let counts = ctxs.iter().map(bug_detection).collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate_detection(&counts))
}

pub fn aggregate_detection(counts: &[DetectionCount]) -> Option<RealBugDetection> {
    if counts.is_empty() {
        return None;
    }
    let detecting: usize = counts.iter().map(|c| c.detecting).sum();
    let revealing: usize = counts.iter().map(|c| c.revealing).sum();
    Some(RealBugDetection {
        macro_avg: counts.iter().map(DetectionCount::rate).sum::<f64>() / counts.len() as f64,
        micro_avg: detecting as f64 / revealing as f64,
    })
}

/// Mutants killed by at least one bug-revealing test.
pub fn coupled_mutants(ctx: &BugContext) -> BTreeSet<&str> {
    let cols = ctx.revealing_columns();
    ctx.matrix
        .mutants()
        .iter()
        .zip(ctx.matrix.rows())
        .filter(|(_, r)| cols.iter().any(|&j| r[j]))
        .map(|(m, _)| m.as_str())
        .collect()
}

pub fn coupling_rate(ctx: &BugContext) -> Result<f64, MetricsError> {
    ctx.require_mutants()?;
    Ok(coupled_mutants(ctx).len() as f64 / ctx.matrix.mutants().len() as f64)
}

/// Bugs whose Ochiai is at least `threshold`.
pub fn high_similarity_count(values: &[Option<f64>], threshold: f64) -> usize {
    values.iter().flatten().filter(|&&v| v >= threshold).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugEffectiveness {
    pub bug_id: String,
    pub mutants: usize,
    pub killed: usize,
    pub coupled: usize,
    pub mutation_score: Option<f64>,
    pub coupling_rate: Option<f64>,
    pub bug_ochiai: Option<f64>,
    pub detection: Option<DetectionCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivenessReport {
    pub bugs: Vec<BugEffectiveness>,
    /// Killed over useful mutants, pooled across bugs.
    pub mutation_score: Option<f64>,
    /// Coupled over useful mutants, pooled across bugs.
    pub coupling_rate: Option<f64>,
    pub rbd: Option<RealBugDetection>,
    /// Bugs without useful mutants excluded.
    pub aoc: Option<f64>,
    /// Bugs without useful mutants counted as 0.
    pub aoc_zero_filled: Option<f64>,
    pub bugs_without_mutants: usize,
    pub high_similarity_count: usize,
    pub high_similarity_threshold: f64,
}

pub fn effectiveness_report(ctxs: &[BugContext], threshold: f64) -> EffectivenessReport {
    let bugs: Vec<BugEffectiveness> = ctxs
        .iter()
        .map(|c| BugEffectiveness {
            bug_id: c.bug_id.clone(),
            mutants: c.matrix.mutants().len(),
            killed: c.matrix.killed_mutants().len(),
            coupled: coupled_mutants(c).len(),
            mutation_score: mutation_score(c).ok(),
            coupling_rate: coupling_rate(c).ok(),
            bug_ochiai: bug_ochiai(c),
            detection: bug_detection(c).ok(),
        })
        .collect();
    let total: usize = bugs.iter().map(|b| b.mutants).sum();
    let pooled = |f: fn(&BugEffectiveness) -> usize| (total > 0).then(|| bugs.iter().map(f).sum::<usize>() as f64 / total as f64);
    let ochiais: Vec<Option<f64>> = bugs.iter().map(|b| b.bug_ochiai).collect();
    let detections: Vec<DetectionCount> = bugs.iter().filter_map(|b| b.detection).collect();
    EffectivenessReport {
        mutation_score: pooled(|b| b.killed),
        coupling_rate: pooled(|b| b.coupled),
        rbd: aggregate_detection(&detections),
        aoc: aoc(&ochiais),
        aoc_zero_filled: aoc_zero_filled(&ochiais),
        bugs_without_mutants: bugs.iter().filter(|b| b.mutants == 0).count(),
        high_similarity_count: high_similarity_count(&ochiais, threshold),
        high_similarity_threshold: threshold,
        bugs,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |v| format!("{v:.4}"))
}

pub fn render_effectiveness(r: &EffectivenessReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>7} {:>7} {:>8} {:>8} {:>8} {:>8}", "bug", "mutants", "killed", "MS", "R.B.D.", "Coup.", "Ochiai");
    for b in &r.bugs {
        let _ = writeln!(
            out,
            "{:<24} {:>7} {:>7} {:>8} {:>8} {:>8} {:>8}",
            b.bug_id,
            b.mutants,
            b.killed,
            opt(b.mutation_score),
            opt(b.detection.map(|d| d.rate())),
            opt(b.coupling_rate),
            opt(b.bug_ochiai)
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "MS (pooled)            {}", opt(r.mutation_score));
    let _ = writeln!(out, "R.B.D. macro / micro   {} / {}", opt(r.rbd.map(|d| d.macro_avg)), opt(r.rbd.map(|d| d.micro_avg)));
    let _ = writeln!(out, "Coupling (pooled)      {}", opt(r.coupling_rate));
    let _ = writeln!(
        out,
        "AOC                    {} ({} bugs without mutants excluded; {} if counted as 0)",
        opt(r.aoc),
        r.bugs_without_mutants,
        opt(r.aoc_zero_filled)
    );
    let _ = writeln!(out, "O>={}                 {}", r.high_similarity_threshold, r.high_similarity_count);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(rows: &[&str], revealing: &[&str]) -> BugContext {
        let cols = rows.first().map_or(0, |r| r.len());
        let m = KillMatrix::new(
            "bug",
            (0..rows.len()).map(|i| format!("m{i}")).collect(),
            (1..=cols).map(|j| format!("t{j}")).collect(),
            rows.iter().map(|r| r.chars().map(|c| c == '1').collect()).collect(),
        )
        .unwrap();
        BugContext::new(m, revealing.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn mutation_score_cases() {
        assert_eq!(mutation_score(&ctx(&["10", "01", "11", "00"], &[])).unwrap(), 0.75);
        assert_eq!(mutation_score(&ctx(&["00", "00"], &[])).unwrap(), 0.0);
        assert_eq!(mutation_score(&ctx(&["10", "01"], &[])).unwrap(), 1.0);
        assert!(mutation_score(&ctx(&[], &[])).is_err());
    }

    #[test]
    fn ochiai_cases() {
        assert_eq!(ochiai(&set(&["t1", "t2"]), &set(&["t2", "t3"])), 0.5);
        assert_eq!(ochiai(&set(&["a", "b"]), &set(&["a", "b"])), 1.0);
        assert_eq!(ochiai(&set(&["a"]), &set(&["b"])), 0.0);
        assert_eq!(ochiai(&set(&[]), &set(&["b"])), 0.0);
    }

    #[test]
    fn bug_ochiai_means_rows() {
        assert_eq!(bug_ochiai(&ctx(&["10", "01"], &["t1"])), Some(0.5));
        assert_eq!(bug_ochiai(&ctx(&["110"], &["t1", "t2"])), Some(1.0));
        assert_eq!(bug_ochiai(&ctx(&[], &[])), None);
    }

    #[test]
    fn aoc_cases() {
        assert!((aoc(&[Some(0.2), Some(0.4)]).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(aoc(&[Some(0.7)]), Some(0.7));
        assert_eq!(aoc(&[Some(0.6), None]), Some(0.6));
        assert_eq!(aoc_zero_filled(&[Some(0.6), None]), Some(0.3));
        assert_eq!(aoc(&[None]), None);
    }

    #[test]
    fn detection_cases() {
        assert_eq!(bug_detection(&ctx(&["100"], &["t1", "t2"])).unwrap().rate(), 0.5);
        let all = real_bug_detection(&[ctx(&["11"], &["t1", "t2"])]).unwrap().unwrap();
        assert_eq!((all.macro_avg, all.micro_avg), (1.0, 1.0));
        let three = real_bug_detection(&[
            ctx(&["100"], &["t1", "t2"]),
            ctx(&["110"], &["t1", "t2"]),
            ctx(&["0000"], &["t1", "t2", "t3", "t4"]),
        ])
        .unwrap()
        .unwrap();
        assert!((three.macro_avg - 0.5).abs() < 1e-12);
        assert!((three.micro_avg - 3.0 / 8.0).abs() < 1e-12);
        assert!(bug_detection(&ctx(&["1"], &[])).is_err());
    }

    #[test]
    fn coupling_cases() {
        assert_eq!(coupling_rate(&ctx(&["01", "01"], &["t1"])).unwrap(), 0.0);
        assert_eq!(coupling_rate(&ctx(&["10", "11"], &["t1"])).unwrap(), 1.0);
        assert_eq!(coupling_rate(&ctx(&["10", "01", "11", "00", "01"], &["t1"])).unwrap(), 0.4);
    }

    #[test]
    fn high_similarity_is_inclusive() {
        assert_eq!(high_similarity_count(&[Some(0.79), Some(0.8), Some(0.95)], HIGH_SIMILARITY), 2);
        assert_eq!(high_similarity_count(&[], HIGH_SIMILARITY), 0);
    }

    #[test]
    fn unknown_revealing_test_rejected() {
        let m = KillMatrix::new("b", vec!["m".into()], vec!["t".into()], vec![vec![true]]).unwrap();
        assert!(BugContext::new(m, set(&["zz"])).is_err());
    }

    #[test]
    fn report_pools_and_excludes() {
        let r = effectiveness_report(&[ctx(&["10", "00"], &["t1"]), ctx(&[], &[])], HIGH_SIMILARITY);
        assert_eq!(r.mutation_score, Some(0.5));
        assert_eq!(r.aoc, Some(0.5));
        assert_eq!(r.aoc_zero_filled, Some(0.25));
        assert_eq!(r.bugs_without_mutants, 1);
        assert!(render_effectiveness(&r).contains("AOC"));
    }
}
