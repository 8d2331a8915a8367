use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{focal_method, ManifestEntry, TargetSummary};
use super::{
    read_jsonl, sample_targets, write_json, write_jsonl, Mode, PipelineConfig, PipelineError, Target, COUPLING, MANIFEST,
    MATRICES, MUTANTS, REPORT_JSON, REPORT_TXT, TARGET_SUMMARY, VALIDITY, VALIDITY_TXT,
};
use crate::chunker::check_syntax;
use crate::execution::{build_kill_matrix, load_matrix, run_mutants, run_suite, save_matrix, KillMatrix, SuiteSpec};
use crate::mbfl::{fl_metrics, fl_stats_from_matrix, localize, render_fl_table, FlMetrics, Method, SuspiciousnessReport, DEFAULT_KS};
use crate::metrics::{coupled_mutants, effectiveness_report, render_effectiveness, BugContext, EffectivenessReport, HIGH_SIMILARITY};
use crate::process::CommandTemplate;
use crate::promptgen::Mutant;
use crate::tcp::{apfd, prioritize, Strategy};
use crate::validity::{
    check_compile_all, dedup, fmt_pct, pooled_metrics, render_validity_table, CompileResult, ValidityLedger,
    ValidityMetrics,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcpRow {
    pub bug_id: String,
    pub strategy: String,
    pub apfd: f64,
    pub order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcpSummary {
    pub strategy: String,
    pub mean_apfd: Option<f64>,
    pub bugs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GenerationCost {
    pub methods: usize,
    pub queries: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub queries_per_method: Option<f64>,
    pub tokens_per_query: Option<f64>,
}

/// What one bug contributed; `error` is set when evaluation stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugEvaluation {
    pub bug_id: String,
    pub mode: Mode,
    pub ledger: ValidityLedger,
    pub useful: Vec<String>,
    pub matrix_tests: usize,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub chunking: bool,
    pub rag: bool,
    pub bugs: Vec<BugEvaluation>,
    pub validity: ValidityMetrics,
    pub effectiveness: Option<EffectivenessReport>,
    pub tcp: Vec<TcpSummary>,
    pub tcp_rows: Vec<TcpRow>,
    pub mbfl: Vec<(Method, FlMetrics)>,
    pub cost: GenerationCost,
    /// `(bug, message)` for targets that failed in generation or evaluation.
    pub errors: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CouplingRecord {
    mutant_id: String,
    bug_id: String,
    project: String,
    coupled: bool,
}

fn cost(summaries: &[TargetSummary]) -> GenerationCost {
    let ok: Vec<&TargetSummary> = summaries.iter().filter(|s| s.error.is_none()).collect();
    let queries: usize = ok.iter().map(|s| s.queries).sum();
    let prompt_tokens: u64 = ok.iter().map(|s| s.usage.prompt_tokens).sum();
    let completion_tokens: u64 = ok.iter().map(|s| s.usage.completion_tokens).sum();
    GenerationCost {
        methods: ok.len(),
        queries,
        prompt_tokens,
        completion_tokens,
        queries_per_method: (!ok.is_empty()).then(|| queries as f64 / ok.len() as f64),
        tokens_per_query: (queries > 0).then(|| (prompt_tokens + completion_tokens) as f64 / queries as f64),
    }
}

fn compile(cfg: &PipelineConfig, target: &Target, mutants: &[Mutant]) -> Result<Vec<CompileResult>, String> {
    match &cfg.commands.compile {
        Some(t) => {
            let tmpl = CommandTemplate::parse(t).map_err(|e| e.to_string())?;
            let timeout = Duration::from_secs(cfg.commands.compile_timeout_secs);
            check_compile_all(mutants, &tmpl, &target.file_name(), timeout, cfg.workers)
                .map_err(|e| format!("compile: {e}"))
        }
        None => Ok(mutants
            .par_iter()
            .map(|m| {
                let r = check_syntax(&m.source, cfg.language);
                CompileResult {
                    mutant_id: m.id.clone(),
                    compiled: r.is_ok(),
                    timed_out: false,
                    stderr: r.err().map(|e| e.to_string()).unwrap_or_default(),
                }
            })
            .collect()),
    }
}

fn matrix_dirs(cfg: &PipelineConfig) -> Vec<PathBuf> {
    cfg.matrices_dir.iter().cloned().chain([cfg.output_dir.join(MATRICES)]).collect()
}

fn stored_matrix(cfg: &PipelineConfig, bug: &str, keep: &BTreeSet<String>) -> Option<Result<KillMatrix, String>> {
    let path = matrix_dirs(cfg).into_iter().map(|d| d.join(format!("{bug}.matrix"))).find(|p| p.exists())?;
    Some(load_matrix(&path).map_err(|e| e.to_string()).and_then(|full| {
        let m = full.select_mutants(keep);
        match keep.iter().find(|id| m.mutant_index(id).is_none()) {
            Some(id) => Err(format!("{} has no row for useful mutant {id}", path.display())),
            None => Ok(m),
        }
    }))
}

fn run_matrix(cfg: &PipelineConfig, target: &Target, original: &str, useful: &[&Mutant]) -> Result<KillMatrix, String> {
    let bug = &target.bug_id;
    let Some(test) = &cfg.commands.test else {
        return Err("no stored kill matrix and no test command".into());
    };
    let spec = SuiteSpec {
        project_dir: target.project_dir.clone(),
        source_path: target.run_path(),
        command: CommandTemplate::parse(test).map_err(|e| e.to_string())?,
        timeout: Duration::from_secs(cfg.commands.test_timeout_secs),
    };
    let orig = run_suite(bug, original, &spec, spec.timeout, None).map_err(|e| e.to_string())?;
    let programs: Vec<(String, String)> = useful.iter().map(|m| (m.id.clone(), m.source.clone())).collect();
    let floor = Duration::from_secs(cfg.commands.mutant_timeout_floor_secs);
    let runs = run_mutants(&programs, &spec, &orig, floor, cfg.workers).map_err(|e| e.to_string())?;
    let vectors = runs
        .into_iter()
        .map(|r| r.map(|r| r.vector))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let matrix = build_kill_matrix(bug, &orig.vector, &vectors).map_err(|e| e.to_string())?;
    let dir = cfg.output_dir.join(MATRICES);
    fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    save_matrix(&matrix, &dir.join(format!("{bug}.matrix"))).map_err(|e| e.to_string())?;
    Ok(matrix)
}

/// Validity for one target, returned with the original program text.
fn validate_bug(cfg: &PipelineConfig, s: &TargetSummary, manifest: &[&ManifestEntry], mutants: &[Mutant]) -> Result<(ValidityLedger, String), String> {
    let target = &s.target;
    let generated: Vec<String> = manifest.iter().map(|e| e.id.clone()).collect();
    let original = fs::read_to_string(&target.source).map_err(|e| format!("{}: {e}", target.source.display()))?;
    let partition = dedup(mutants, &original, cfg.normalization);
    let compiled = compile(cfg, target, mutants)?;
    Ok((ValidityLedger::assemble(&target.bug_id, s.expected, generated, &partition, &compiled), original))
}

struct BugOutcome {
    eval: BugEvaluation,
    matrix: Option<KillMatrix>,
}

fn evaluate_bug(cfg: &PipelineConfig, s: &TargetSummary, manifest: &[&ManifestEntry], mutants: &[Mutant], rerun: bool) -> BugOutcome {
    let target = &s.target;
    let mut eval = BugEvaluation {
        bug_id: target.bug_id.clone(),
        mode: target.mode,
        ledger: ValidityLedger {
            bug_id: target.bug_id.clone(),
            expected: s.expected,
            generated: manifest.iter().map(|e| e.id.clone()).collect(),
            ..Default::default()
        },
        useful: Vec::new(),
        matrix_tests: 0,
        error: None,
    };
    let (ledger, original) = match validate_bug(cfg, s, manifest, mutants) {
        Ok(v) => v,
        Err(e) => {
            eval.error = Some(e);
            return BugOutcome { eval, matrix: None };
        }
    };
    eval.ledger = ledger;
    eval.useful = eval.ledger.useful();
    let keep: BTreeSet<String> = eval.useful.iter().cloned().collect();
    let by_id: BTreeMap<&str, &Mutant> = mutants.iter().map(|m| (m.id.as_str(), m)).collect();
    let useful: Vec<&Mutant> = eval.useful.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect();
    let stored = if rerun { None } else { stored_matrix(cfg, &target.bug_id, &keep) };
    match stored.unwrap_or_else(|| run_matrix(cfg, target, &original, &useful)) {
        Ok(m) => {
            eval.matrix_tests = m.tests().len();
            BugOutcome { eval, matrix: Some(m) }
        }
        Err(e) => {
            eval.error = Some(e);
            BugOutcome { eval, matrix: None }
        }
    }
}

/// Generation artifacts of the targets selected for evaluation.
struct Loaded {
    summaries: Vec<TargetSummary>,
    selected: Vec<TargetSummary>,
    manifest: Vec<ManifestEntry>,
    mutants: Vec<Mutant>,
}

impl Loaded {
    fn read(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let out = &cfg.output_dir;
        let summaries: Vec<TargetSummary> = read_jsonl(&out.join(TARGET_SUMMARY))?;
        let ok: Vec<Target> = summaries.iter().filter(|s| s.error.is_none()).map(|s| s.target.clone()).collect();
        let chosen: BTreeSet<String> = sample_targets(ok, cfg.sample_targets, cfg.seed).into_iter().map(|t| t.bug_id).collect();
        Ok(Self {
            selected: summaries.iter().filter(|s| chosen.contains(&s.target.bug_id)).cloned().collect(),
            summaries,
            manifest: read_jsonl(&out.join(MANIFEST))?,
            mutants: read_jsonl(&out.join(MUTANTS))?,
        })
    }

    fn of(&self, bug: &str) -> (Vec<&ManifestEntry>, Vec<Mutant>) {
        (
            self.manifest.iter().filter(|e| e.bug_id == bug).collect(),
            self.mutants.iter().filter(|m| m.bug_id == bug).cloned().collect(),
        )
    }

    fn generation_errors(&self) -> Vec<(String, String)> {
        self.summaries
            .iter()
            .filter_map(|s| s.error.as_ref().map(|e| (s.target.bug_id.clone(), format!("generation: {e}"))))
            .collect()
    }
}

/// Duplicate and compile checks only; writes the validity ledgers and table.
pub fn run_validate(cfg: &PipelineConfig) -> Result<(Vec<ValidityLedger>, Vec<(String, String)>), PipelineError> {
    let loaded = Loaded::read(cfg)?;
    let mut errors = loaded.generation_errors();
    let mut ledgers = Vec::new();
    for s in &loaded.selected {
        let (entries, mutants) = loaded.of(&s.target.bug_id);
        match validate_bug(cfg, s, &entries, &mutants) {
            Ok((l, _)) => ledgers.push(l),
            Err(e) => errors.push((s.target.bug_id.clone(), e)),
        }
    }
    let out = &cfg.output_dir;
    write_jsonl(&out.join(VALIDITY), &ledgers)?;
    let txt = out.join(VALIDITY_TXT);
    fs::write(&txt, render_validity_table(&ledgers)).map_err(|e| PipelineError::io(&txt, e))?;
    Ok((ledgers, errors))
}

/// Runs the test command on every selected target and stores kill
/// matrices under the output directory, replacing earlier ones.
pub fn run_execute(cfg: &PipelineConfig) -> Result<Vec<(String, Result<KillMatrix, String>)>, PipelineError> {
    if cfg.commands.test.is_none() {
        return Err(PipelineError::Config("execute needs commands.test".into()));
    }
    let loaded = Loaded::read(cfg)?;
    Ok(loaded
        .selected
        .iter()
        .map(|s| {
            let (entries, mutants) = loaded.of(&s.target.bug_id);
            let o = evaluate_bug(cfg, s, &entries, &mutants, true);
            (s.target.bug_id.clone(), o.matrix.ok_or_else(|| o.eval.error.unwrap_or_default()))
        })
        .collect())
}

fn mbfl_reports(
    cfg: &PipelineConfig,
    target: &Target,
    matrix: &KillMatrix,
    mutants: &[Mutant],
) -> Result<Vec<SuspiciousnessReport>, String> {
    let source = fs::read_to_string(&target.source).map_err(|e| e.to_string())?;
    let method = focal_method(target, &source, cfg)?;
    let universe: BTreeSet<usize> = method
        .line_set()
        .into_iter()
        .filter(|&l| method.line_text(l).is_some_and(|t| !t.trim().is_empty()))
        .collect();
    let statements: BTreeMap<String, usize> = mutants.iter().map(|m| (m.id.clone(), m.target_line)).collect();
    let (stats, g) = fl_stats_from_matrix(matrix, &target.bug_revealing_tests, &statements).map_err(|e| e.to_string())?;
    Ok(Method::ALL
        .iter()
        .map(|&method| localize(&target.bug_id, &stats, &g, &universe, &target.faulty_lines, method))
        .collect())
}

/// Reads the generation artifacts and evaluates every successful target.
pub fn run_evaluate(cfg: &PipelineConfig) -> Result<EvaluationReport, PipelineError> {
    if cfg.commands.test.is_none() && !matrix_dirs(cfg).iter().any(|d| d.is_dir()) {
        return Err(PipelineError::NoMatrixSource);
    }
    let out = &cfg.output_dir;
    let loaded = Loaded::read(cfg)?;
    let mut errors = loaded.generation_errors();
    let mut bugs = Vec::new();
    let mut ctxs = Vec::new();
    let mut fl: BTreeMap<Method, Vec<SuspiciousnessReport>> = BTreeMap::new();
    let mut tcp_rows = Vec::new();
    let mut coupling = Vec::new();
    let strategies = [Strategy::Grk, Strategy::Grd, Strategy::Hyb { omega: cfg.omega }];
    for s in &loaded.selected {
        let bug = &s.target.bug_id;
        let (entries, bug_mutants) = loaded.of(bug);
        let BugOutcome { mut eval, matrix } = evaluate_bug(cfg, s, &entries, &bug_mutants, false);
        if let Some(matrix) = matrix {
            let result = match s.target.mode {
                Mode::Fixed => BugContext::new(matrix.clone(), s.target.bug_revealing_tests.clone())
                    .map_err(|e| e.to_string())
                    .map(|ctx| {
                        let coupled = coupled_mutants(&ctx);
                        for id in &eval.useful {
                            coupling.push(CouplingRecord {
                                mutant_id: id.clone(),
                                bug_id: bug.clone(),
                                project: s.target.project.clone(),
                                coupled: coupled.contains(id.as_str()),
                            });
                        }
                        if !ctx.bug_revealing_tests.is_empty() && !matrix.tests().is_empty() {
                            let detect = vec![ctx.bug_revealing_tests.clone()];
                            for st in strategies {
                                if let Ok(p) = prioritize(&matrix, st) {
                                    if let Ok(v) = apfd(&p.order, &detect) {
                                        tcp_rows.push(TcpRow { bug_id: bug.clone(), strategy: st.to_string(), apfd: v, order: p.order });
                                    }
                                }
                            }
                        }
                        ctxs.push(ctx);
                    }),
                Mode::Buggy => mbfl_reports(cfg, &s.target, &matrix, &bug_mutants).map(|reports| {
                    for r in reports {
                        fl.entry(r.method).or_default().push(r);
                    }
                }),
            };
            if let Err(e) = result {
                eval.error = Some(e);
            }
        }
        if let Some(e) = &eval.error {
            log::warn!("{bug}: {e}");
            errors.push((bug.clone(), e.clone()));
        }
        bugs.push(eval);
    }

    let ledgers: Vec<ValidityLedger> = bugs.iter().map(|b| b.ledger.clone()).collect();
    let tcp = strategies
        .iter()
        .map(|st| {
            let vals: Vec<f64> = tcp_rows.iter().filter(|r| r.strategy == st.to_string()).map(|r| r.apfd).collect();
            TcpSummary {
                strategy: st.to_string(),
                mean_apfd: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
                bugs: vals.len(),
            }
        })
        .collect();
    let report = EvaluationReport {
        chunking: cfg.chunking,
        rag: cfg.rag,
        validity: pooled_metrics(&ledgers),
        effectiveness: (!ctxs.is_empty()).then(|| effectiveness_report(&ctxs, HIGH_SIMILARITY)),
        tcp,
        tcp_rows,
        mbfl: fl.into_iter().map(|(m, r)| (m, fl_metrics(&r, &DEFAULT_KS))).collect(),
        cost: cost(&loaded.summaries),
        errors,
        bugs,
    };
    write_jsonl(&out.join(VALIDITY), &ledgers)?;
    write_jsonl(&out.join(COUPLING), &coupling)?;
    write_json(&out.join(REPORT_JSON), &report)?;
    let txt = out.join(REPORT_TXT);
    fs::write(&txt, render_report(&report)).map_err(|e| PipelineError::io(&txt, e))?;
    Ok(report)
}

pub fn render_report(r: &EvaluationReport) -> String {
    let opt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |v| format!("{v:.p$}"));
    let mut out = String::new();
    let _ = writeln!(out, "settings: chunking={} rag={}", r.chunking, r.rag);
    let _ = writeln!(out, "\n== validity ==");
    let ledgers: Vec<ValidityLedger> = r.bugs.iter().map(|b| b.ledger.clone()).collect();
    out.push_str(&render_validity_table(&ledgers));
    let _ = writeln!(
        out,
        "pooled: Ge.R. {} ND.R. {} Com.R. {}",
        fmt_pct(r.validity.generation_rate),
        fmt_pct(r.validity.nonduplicate_rate),
        fmt_pct(r.validity.compilable_rate)
    );
    let _ = writeln!(out, "\n== effectiveness ==");
    match &r.effectiveness {
        Some(e) => out.push_str(&render_effectiveness(e)),
        None => out.push_str("no fixed-version targets evaluated\n"),
    }
    let _ = writeln!(out, "\n== test prioritization (APFD) ==");
    for t in &r.tcp {
        let _ = writeln!(out, "{:<10} {:>8} over {} bugs", t.strategy, opt(t.mean_apfd, 4), t.bugs);
    }
    let _ = writeln!(out, "\n== fault localization ==");
    if r.mbfl.is_empty() {
        out.push_str("no buggy-version targets evaluated\n");
    } else {
        out.push_str(&render_fl_table(&r.mbfl));
    }
    let c = &r.cost;
    let _ = writeln!(out, "\n== cost ==");
    let _ = writeln!(out, "methods {} queries {} prompt tokens {} completion tokens {}", c.methods, c.queries, c.prompt_tokens, c.completion_tokens);
    let _ = writeln!(out, "queries/method {} tokens/query {}", opt(c.queries_per_method, 2), opt(c.tokens_per_query, 1));
    let _ = writeln!(out, "\n== errors ==");
    if r.errors.is_empty() {
        out.push_str("none\n");
    }
    for (bug, e) in &r.errors {
        let _ = writeln!(out, "{bug}: {e}");
    }
    out
}
