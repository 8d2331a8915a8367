//! Supervised fine-tuning data from coupled mutants.
//!
//! Each instance pairs the exact generation prompt of the mutant's chunk
//! with a response holding the mutant as a `<json>` pair array, so
//! training data has the same shape the model sees at inference time.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::promptgen::{render_pairs, Mutant, MutationPair};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub bug_id: String,
    pub project: String,
    pub chunk_id: usize,
    /// One id, or several in grouped mode.
    pub mutant_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub prompt: String,
    pub response: String,
    pub provenance: Provenance,
}

/// A materialized mutant with what export needs to know about it.
#[derive(Debug, Clone)]
pub struct SftCandidate<'a> {
    pub mutant: &'a Mutant,
    pub project: String,
    pub coupled: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ExportOptions {
    /// One instance per chunk holding all of its coupled mutants.
    pub grouped: bool,
    pub exclude_projects: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedMutant {
    pub mutant_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct SftExport {
    pub instances: Vec<TrainingInstance>,
    pub skipped: Vec<SkippedMutant>,
    pub uncoupled: usize,
    pub excluded_by_project: usize,
}

/// The pair a mutant answers: original line to mutated line, both trimmed.
pub fn mutant_pair(m: &Mutant) -> MutationPair {
    MutationPair {
        precode: m.original_line_text.trim().to_string(),
        aftercode: m.mutated_line_text.trim().to_string(),
    }
}

/// Builds instances for coupled mutants in input order. `prompts` maps
/// `(bug_id, chunk_id)` to the generation prompt of that chunk.
pub fn export(
    candidates: &[SftCandidate<'_>],
    prompts: &BTreeMap<(String, usize), String>,
    opts: &ExportOptions,
) -> SftExport {
    let mut out = SftExport::default();
    let mut groups: Vec<((String, usize), String, Vec<&Mutant>)> = Vec::new();
    for c in candidates {
        if !c.coupled {
            out.uncoupled += 1;
            continue;
        }
        if opts.exclude_projects.contains(&c.project) {
            out.excluded_by_project += 1;
            continue;
        }
        let key = (c.mutant.bug_id.clone(), c.mutant.chunk_id);
        if !prompts.contains_key(&key) {
            out.skipped.push(SkippedMutant {
                mutant_id: c.mutant.id.clone(),
                reason: format!("missing chunk context for {} chunk {}", key.0, key.1),
            });
            continue;
        }
        match groups.iter_mut().find(|g| opts.grouped && g.0 == key) {
            Some(g) => g.2.push(c.mutant),
            None => groups.push((key, c.project.clone(), vec![c.mutant])),
        }
    }
    for ((bug_id, chunk_id), project, mutants) in groups {
        let pairs: Vec<MutationPair> = mutants.iter().map(|m| mutant_pair(m)).collect();
        out.instances.push(TrainingInstance {
            prompt: prompts[&(bug_id.clone(), chunk_id)].clone(),
            response: render_pairs(&pairs),
            provenance: Provenance {
                bug_id,
                project,
                chunk_id,
                mutant_ids: mutants.iter().map(|m| m.id.clone()).collect(),
            },
        });
    }
    out
}

pub fn write_jsonl<W: Write>(instances: &[TrainingInstance], mut w: W) -> io::Result<()> {
    for i in instances {
        serde_json::to_writer(&mut w, i)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
