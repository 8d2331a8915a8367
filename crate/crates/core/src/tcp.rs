//! Mutation-based test case prioritization.
//!
//! Three additional-greedy strategies over a kill matrix:
//!
//! * GRK picks the test killing the most mutants not yet killed.
//! * GRD picks the test distinguishing the most mutant pairs not yet
//!   distinguished. A test distinguishes `(m1, m2)` when it kills exactly
//!   one of them.
//! * HYB-ω scores `ω·kills/|M| + (1−ω)·pairs/|P|`, where `|P|` counts all
//!   mutant pairs.
//!
//! Ties go to the smallest test id. When no remaining test adds anything,
//! the accumulated state is reset and selection continues, so every
//! ordering covers all tests.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::execution::KillMatrix;

pub const DEFAULT_OMEGA: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum TcpError {
    #[error("kill matrix has no tests")]
    NoTests,
    #[error("weight {0} is outside [0, 1]")]
    OmegaOutOfRange(f64),
    #[error("test ordering is empty")]
    EmptyOrder,
    #[error("no bugs to detect")]
    NoBugs,
    #[error("bug {0} is not detected by any test in the ordering")]
    Undetected(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Strategy {
    Grk,
    Grd,
    Hyb { omega: f64 },
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Grk => f.write_str("GRK"),
            Strategy::Grd => f.write_str("GRD"),
            Strategy::Hyb { omega } => write!(f, "HYB-{omega}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub test: String,
    pub added_kills: usize,
    pub added_pairs: usize,
    pub score: f64,
    /// State was reset before this pick.
    pub reset: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrioritizedSuite {
    pub strategy: Strategy,
    pub order: Vec<String>,
    pub steps: Vec<Step>,
}

/// Kill and distinguish state shared by all strategies.
struct State<'a> {
    cols: Vec<Vec<bool>>,
    tests: &'a [String],
    killed: Vec<bool>,
    /// Partition class of each mutant under the selected tests.
    class: Vec<usize>,
    classes: usize,
}

impl<'a> State<'a> {
    fn new(matrix: &'a KillMatrix) -> Self {
        let n = matrix.mutants().len();
        let cols = (0..matrix.tests().len())
            .map(|j| matrix.rows().iter().map(|r| r[j]).collect())
            .collect();
        Self { cols, tests: matrix.tests(), killed: vec![false; n], class: vec![0; n], classes: 1.min(n) }
    }

    fn fresh(&self) -> bool {
        !self.killed.iter().any(|&k| k) && self.classes <= 1
    }

    fn reset(&mut self) {
        self.killed.iter_mut().for_each(|k| *k = false);
        self.class.iter_mut().for_each(|c| *c = 0);
        self.classes = 1.min(self.class.len());
    }

    fn added_kills(&self, j: usize) -> usize {
        self.cols[j].iter().zip(&self.killed).filter(|(&k, &done)| k && !done).count()
    }

    fn added_pairs(&self, j: usize) -> usize {
        let mut size = vec![0usize; self.classes];
        let mut hit = vec![0usize; self.classes];
        for (m, &c) in self.class.iter().enumerate() {
            size[c] += 1;
            if self.cols[j][m] {
                hit[c] += 1;
            }
        }
        size.iter().zip(&hit).map(|(&s, &k)| k * (s - k)).sum()
    }

    fn select(&mut self, j: usize) {
        let mut split = std::collections::HashMap::new();
        let mut next = 0;
        for (m, c) in self.class.iter_mut().enumerate() {
            let key = (*c, self.cols[j][m]);
            *c = *split.entry(key).or_insert_with(|| {
                next += 1;
                next - 1
            });
            if self.cols[j][m] {
                self.killed[m] = true;
            }
        }
        self.classes = next;
    }
}

fn run(matrix: &KillMatrix, strategy: Strategy) -> Result<PrioritizedSuite, TcpError> {
    if matrix.tests().is_empty() {
        return Err(TcpError::NoTests);
    }
    if let Strategy::Hyb { omega } = strategy {
        if !(0.0..=1.0).contains(&omega) {
            return Err(TcpError::OmegaOutOfRange(omega));
        }
    }
    let n = matrix.mutants().len();
    let pairs = n * n.saturating_sub(1) / 2;
    let norm = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let score = |k: usize, p: usize| match strategy {
        Strategy::Grk => k as f64,
        Strategy::Grd => p as f64,
        Strategy::Hyb { omega } => omega * norm(k, n) + (1.0 - omega) * norm(p, pairs),
    };

    let mut state = State::new(matrix);
    // tests() is sorted, so scanning in index order breaks ties by id
    let mut remaining: Vec<usize> = (0..matrix.tests().len()).collect();
    let mut steps = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let mut reset = false;
        let best = loop {
            let mut best: Option<(usize, usize, usize, f64)> = None;
            for (pos, &j) in remaining.iter().enumerate() {
                let (k, p) = (state.added_kills(j), state.added_pairs(j));
                let s = score(k, p);
                if best.is_none_or(|b| s > b.3) {
                    best = Some((pos, k, p, s));
                }
            }
            let b = best.expect("remaining is non-empty");
            if b.3 > 0.0 || state.fresh() {
                break b;
            }
            state.reset();
            reset = true;
        };
        let (pos, added_kills, added_pairs, s) = best;
        let j = remaining.remove(pos);
        state.select(j);
        steps.push(Step { test: state.tests[j].clone(), added_kills, added_pairs, score: s, reset });
    }
    Ok(PrioritizedSuite { strategy, order: steps.iter().map(|s| s.test.clone()).collect(), steps })
}

pub fn grk(matrix: &KillMatrix) -> Result<PrioritizedSuite, TcpError> {
    run(matrix, Strategy::Grk)
}

pub fn grd(matrix: &KillMatrix) -> Result<PrioritizedSuite, TcpError> {
    run(matrix, Strategy::Grd)
}

pub fn hyb(matrix: &KillMatrix, omega: f64) -> Result<PrioritizedSuite, TcpError> {
    run(matrix, Strategy::Hyb { omega })
}

pub fn prioritize(matrix: &KillMatrix, strategy: Strategy) -> Result<PrioritizedSuite, TcpError> {
    run(matrix, strategy)
}

/// `1 − ΣTF/(n·r) + 1/(2n)` where `TF_i` is the 1-based position of the
/// first test detecting bug `i`.
pub fn apfd(order: &[String], detection: &[BTreeSet<String>]) -> Result<f64, TcpError> {
    if order.is_empty() {
        return Err(TcpError::EmptyOrder);
    }
    if detection.is_empty() {
        return Err(TcpError::NoBugs);
    }
    let n = order.len() as f64;
    let r = detection.len() as f64;
    let mut sum = 0usize;
    for (i, bug) in detection.iter().enumerate() {
        let tf = order.iter().position(|t| bug.contains(t)).ok_or(TcpError::Undetected(i))?;
        sum += tf + 1;
    }
    Ok(1.0 - sum as f64 / (n * r) + 1.0 / (2.0 * n))
}
