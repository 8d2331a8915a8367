use std::collections::BTreeMap;
use std::fs;

use serde::{Deserialize, Serialize};

use super::{
    load_targets, write_json, write_jsonl, PipelineConfig, PipelineError, Target, GENERATE_SUMMARY, MANIFEST, MUTANTS,
    PROMPTS, TARGET_SUMMARY,
};
use crate::chunker::{chunk_method, parse_method, whole_method_chunk, CodeChunk, FocalMethod};
use crate::corpus::{ingest_corpus, split_lines, Corpus};
use crate::embedder::{build_index, EmbeddingBackend, VectorIndex};
use crate::llm::{complete_batch, ChatBackend, PromptRequest, TokenUsage};
use crate::promptgen::{materialize, parse_response, render_examples, render_prompt, FewShotExample, Mutant};

/// Retrieval inputs; all absent when RAG is off.
pub struct Resources {
    pub corpus: Option<Corpus>,
    pub index: Option<VectorIndex>,
    pub embedder: Option<Box<dyn EmbeddingBackend>>,
}

/// Loads the corpus and the index (built in memory when no index file is
/// configured or the file does not exist yet).
pub fn load_resources(cfg: &PipelineConfig) -> Result<Resources, PipelineError> {
    if !cfg.rag {
        return Ok(Resources { corpus: None, index: None, embedder: None });
    }
    let path = cfg.corpus.as_ref().ok_or_else(|| PipelineError::Config("rag is enabled but no corpus is configured".into()))?;
    let ingested = ingest_corpus(path)?;
    for s in &ingested.skipped {
        log::warn!("corpus line {}: skipped ({})", s.line, s.reason);
    }
    let corpus = ingested.corpus;
    let embedder = cfg.embedder.build()?;
    let index = match &cfg.index {
        Some(p) if p.exists() => VectorIndex::load(p)?.with_metric(cfg.metric),
        _ => build_index(&corpus, cfg.key_side, embedder.as_ref(), cfg.metric)?,
    };
    Ok(Resources { corpus: Some(corpus), index: Some(index), embedder: Some(embedder) })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedChunk {
    pub chunk: CodeChunk,
    pub examples: Vec<FewShotExample>,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedTarget {
    pub target: Target,
    pub source: String,
    pub chunks: Vec<PlannedChunk>,
}

impl PlannedTarget {
    /// One mutant expected per chunk line.
    pub fn expected(&self) -> usize {
        self.chunks.iter().map(|c| c.chunk.line_count()).sum()
    }
}

pub fn prompt_id(bug_id: &str, chunk_id: usize) -> String {
    format!("{bug_id}.c{chunk_id:03}")
}

pub fn mutant_id(bug_id: &str, chunk_id: usize, k: usize) -> String {
    format!("{bug_id}.c{chunk_id:03}.m{k:03}")
}

pub(crate) fn focal_method(target: &Target, source: &str, cfg: &PipelineConfig) -> Result<FocalMethod, String> {
    let lines = split_lines(source);
    if target.end_line > lines.len() {
        return Err(format!("method ends at line {} but {} has {} lines", target.end_line, target.source.display(), lines.len()));
    }
    let text: String = lines[target.start_line - 1..target.end_line].concat();
    parse_method(&text, target.start_line, cfg.language).map_err(|e| format!("focal method: {e}"))
}

/// Walks down the full ranking until `top_n` renderable examples are found.
fn retrieve(res: &Resources, probe_text: &str, top_n: usize) -> Result<Vec<FewShotExample>, String> {
    let (Some(corpus), Some(index), Some(embedder)) = (&res.corpus, &res.index, &res.embedder) else {
        return Ok(Vec::new());
    };
    let probe = embedder.embed(probe_text).map_err(|e| format!("embedding: {e}"))?;
    let hits = index.query(&probe, index.len()).map_err(|e| format!("retrieval: {e}"))?;
    let (mut examples, _) = render_examples(hits.iter().filter_map(|h| corpus.get(&h.id)));
    examples.truncate(top_n);
    Ok(examples)
}

fn plan_target(cfg: &PipelineConfig, res: &Resources, target: &Target) -> Result<PlannedTarget, String> {
    let source = fs::read_to_string(&target.source).map_err(|e| format!("{}: {e}", target.source.display()))?;
    let method = focal_method(target, &source, cfg)?;
    let chunks = if cfg.chunking { chunk_method(&method) } else { vec![whole_method_chunk(&method)] };
    let chunks = chunks
        .into_iter()
        .map(|chunk| {
            let examples = retrieve(res, &chunk.text, cfg.top_n)?;
            let prompt = render_prompt(&method, &chunk, &examples, chunk.line_count());
            Ok(PlannedChunk { chunk, examples, prompt })
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(PlannedTarget { target: target.clone(), source, chunks })
}

/// Prompts for every target, in target order. A target that cannot be
/// planned carries its error instead.
pub fn plan_prompts(cfg: &PipelineConfig, res: &Resources, targets: &[Target]) -> Vec<Result<PlannedTarget, (Target, String)>> {
    targets
        .iter()
        .map(|t| plan_target(cfg, res, t).map_err(|e| (t.clone(), e)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: String,
    pub bug_id: String,
    pub chunk_id: usize,
    pub lines: Vec<usize>,
    pub example_ids: Vec<String>,
    pub prompt: String,
}

/// One parsed pair and what became of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub bug_id: String,
    pub chunk_id: usize,
    pub precode: String,
    pub aftercode: String,
    /// Set when materialized.
    #[serde(default)]
    pub target_line: Option<usize>,
    /// Set when rejected.
    #[serde(default)]
    pub rejection: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub target: Target,
    pub chunks: usize,
    pub expected: usize,
    pub queries: usize,
    pub usage: TokenUsage,
    /// Parsed pairs (set A).
    pub pairs: usize,
    pub materialized: usize,
    pub rejected: BTreeMap<String, usize>,
    /// Array elements that were not valid pairs.
    pub dropped_elements: usize,
    /// Replies without a usable `<json>` array.
    pub unparsable_replies: usize,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub backend: String,
    pub chunking: bool,
    pub rag: bool,
    pub top_n: usize,
    pub targets: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub queries: usize,
    pub usage: TokenUsage,
}

fn failed_summary(target: Target, error: String) -> TargetSummary {
    TargetSummary {
        target,
        chunks: 0,
        expected: 0,
        queries: 0,
        usage: TokenUsage::default(),
        pairs: 0,
        materialized: 0,
        rejected: BTreeMap::new(),
        dropped_elements: 0,
        unparsable_replies: 0,
        error: Some(error),
    }
}

/// Plans, prompts and materializes every target, writing all artifacts to
/// the output directory. Fails only when no target succeeds.
pub fn run_generate(
    cfg: &PipelineConfig,
    res: &Resources,
    backend: &dyn ChatBackend,
    targets: &[Target],
) -> Result<GenerateSummary, PipelineError> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out.join("mutants")).map_err(|e| PipelineError::io(out, e))?;
    let plans = plan_prompts(cfg, res, targets);

    let mut prompt_records = Vec::new();
    for plan in plans.iter().flatten() {
        for c in &plan.chunks {
            prompt_records.push(PromptRecord {
                prompt_id: prompt_id(&plan.target.bug_id, c.chunk.id),
                bug_id: plan.target.bug_id.clone(),
                chunk_id: c.chunk.id,
                lines: c.chunk.line_numbers.clone(),
                example_ids: c.examples.iter().map(|e| e.source_pair_id.clone()).collect(),
                prompt: c.prompt.clone(),
            });
        }
    }
    write_jsonl(&out.join(PROMPTS), &prompt_records)?;

    let requests: Vec<PromptRequest> = prompt_records
        .iter()
        .map(|r| PromptRequest { id: r.prompt_id.clone(), prompt: r.prompt.clone() })
        .collect();
    let batch = complete_batch(backend, &requests, cfg.concurrency());
    let mut replies = batch.items.into_iter();

    let mut manifest = Vec::new();
    let mut mutants: Vec<Mutant> = Vec::new();
    let mut summaries = Vec::new();
    for plan in plans {
        let plan = match plan {
            Ok(p) => p,
            Err((t, e)) => {
                log::warn!("{}: {e}", t.bug_id);
                summaries.push(failed_summary(t, e));
                continue;
            }
        };
        let bug = plan.target.bug_id.as_str();
        let mut s = failed_summary(plan.target.clone(), String::new());
        s.error = None;
        s.chunks = plan.chunks.len();
        s.expected = plan.expected();
        let mut bug_manifest = Vec::new();
        let mut bug_mutants = Vec::new();
        for c in &plan.chunks {
            let item = replies.next().expect("one reply per prompt");
            let completion = match item.result {
                Ok(c) => c,
                Err(e) => {
                    s.error = Some(format!("chunk {}: {e}", c.chunk.id));
                    break;
                }
            };
            s.queries += 1;
            s.usage += completion.usage;
            let parsed = parse_response(&completion.text);
            s.dropped_elements += parsed.dropped;
            if parsed.failure.is_some() {
                s.unparsable_replies += 1;
            }
            for (k, pair) in parsed.pairs.iter().enumerate() {
                let id = mutant_id(bug, c.chunk.id, k + 1);
                let mut entry = ManifestEntry {
                    id: id.clone(),
                    bug_id: bug.to_string(),
                    chunk_id: c.chunk.id,
                    precode: pair.precode.clone(),
                    aftercode: pair.aftercode.clone(),
                    target_line: None,
                    rejection: None,
                };
                match materialize(&plan.source, &c.chunk, pair, &id, bug) {
                    Ok(m) => {
                        entry.target_line = Some(m.target_line);
                        bug_mutants.push(m);
                    }
                    Err(r) => {
                        *s.rejected.entry(r.to_string()).or_default() += 1;
                        entry.rejection = Some(r.to_string());
                    }
                }
                bug_manifest.push(entry);
            }
        }
        if let Some(e) = &s.error {
            log::warn!("{bug}: {e}");
            summaries.push(s);
            continue;
        }
        s.pairs = bug_manifest.len();
        s.materialized = bug_mutants.len();
        let file = plan.target.file_name();
        for m in &bug_mutants {
            let dir = out.join("mutants").join(&m.id);
            fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
            fs::write(dir.join(&file), &m.source).map_err(|e| PipelineError::io(&dir, e))?;
        }
        manifest.extend(bug_manifest);
        mutants.extend(bug_mutants);
        summaries.push(s);
    }

    write_jsonl(&out.join(MANIFEST), &manifest)?;
    write_jsonl(&out.join(MUTANTS), &mutants)?;
    write_jsonl(&out.join(TARGET_SUMMARY), &summaries)?;
    let failed = summaries.iter().filter(|s| s.error.is_some()).count();
    let summary = GenerateSummary {
        backend: backend.id(),
        chunking: cfg.chunking,
        rag: cfg.rag,
        top_n: cfg.top_n,
        targets: summaries.len(),
        succeeded: summaries.len() - failed,
        failed,
        queries: summaries.iter().map(|s| s.queries).sum(),
        usage: summaries.iter().fold(TokenUsage::default(), |mut u, s| {
            u += s.usage;
            u
        }),
    };
    write_json(&out.join(GENERATE_SUMMARY), &summary)?;
    if summary.succeeded == 0 {
        return Err(PipelineError::NoTargetSucceeded { failed });
    }
    Ok(summary)
}

/// Convenience wrapper: targets from the configured file.
pub fn generate_from_config(cfg: &PipelineConfig) -> Result<GenerateSummary, PipelineError> {
    let path = cfg.targets.as_ref().ok_or_else(|| PipelineError::Config("no targets file configured".into()))?;
    let targets = load_targets(path)?;
    let res = load_resources(cfg)?;
    let backend = cfg.chat_backend()?;
    run_generate(cfg, &res, backend.as_ref(), &targets)
}

