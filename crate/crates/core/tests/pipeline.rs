//! Generation and evaluation over a tiny Java project with a mock model
//! and a shell test runner.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use mutrag_core::llm::{MockBackend, ScriptEntry};
use mutrag_core::pipeline::{
    load_resources, load_targets, plan_prompts, read_jsonl, run_evaluate, run_generate, run_validate, ManifestEntry,
    PipelineConfig, PipelineError, PlannedTarget, TargetSummary, MANIFEST, REPORT_JSON, REPORT_TXT, TARGET_SUMMARY,
};
use mutrag_core::promptgen::{render_pairs, MutationPair};

const CALC: &str = "public class Calc {
    public static int clamp(int a, int lo, int hi) {
        int x = a;
        if (x < lo) {
            x = lo;
        }
        if (x > hi) {
            x = hi;
        }
        return x;
    }
}
";

// Each test passes while its guarded line is intact.
const RUNNER: &str = r#"f="$1"
check() { if grep -qF -- "$2" "$f"; then echo "$1 PASS"; else echo "$1 FAIL"; fi; }
check t_init 'int x = a;'
check t_low 'if (x < lo) {'
check t_lowset 'x = lo;'
check t_high 'if (x > hi) {'
check t_ret 'return x;'
"#;

const CORPUS: &str = r#"{"id":"p1","project":"A","pre_fix_code":"if (a <= b) {\n  x = 1;\n}","post_fix_code":"if (a < b) {\n  x = 1;\n}"}
{"id":"p2","project":"A","pre_fix_code":"int y = b;\nreturn y;","post_fix_code":"int y = a;\nreturn y;"}
{"id":"p3","project":"B","pre_fix_code":"return -x;","post_fix_code":"return x;"}
"#;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

fn fixture(mode: &str, extra: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    fs::write(root.join("Calc.java"), CALC).unwrap();
    fs::write(root.join("run.sh"), RUNNER).unwrap();
    fs::write(root.join("corpus.jsonl"), CORPUS).unwrap();
    fs::write(
        root.join("targets.jsonl"),
        format!(
            "{{\"bug_id\":\"calc-1\",\"project\":\"A\",\"source\":\"Calc.java\",\"start_line\":2,\"end_line\":11,\"mode\":\"{mode}\",\"bug_revealing_tests\":[\"t_low\"],\"faulty_lines\":[4]}}\n"
        ),
    )
    .unwrap();
    fs::write(
        root.join("mutrag.toml"),
        format!("corpus = \"corpus.jsonl\"\ntargets = \"targets.jsonl\"\ntop_n = 2\n[backend]\nscript = \"script.jsonl\"\n[commands]\ntest = \"sh {root}/run.sh {{source}}\"\n{extra}", root = root.display()),
    )
    .unwrap();
    Fixture { _dir: dir, root }
}

/// A reply per chunk: one mutation per line, plus a repeat, a line that
/// breaks the syntax and a line from outside the chunk.
fn reply(plan: &PlannedTarget, chunk: usize) -> String {
    let c = &plan.chunks[chunk].chunk;
    let lines: Vec<&str> = plan.source.lines().collect();
    let mut pairs = Vec::new();
    for &l in &c.line_numbers {
        let t = lines[l - 1].trim();
        let after = match t {
            "}" => continue,
            t if t.contains('<') => t.replace('<', "<="),
            t if t.contains('>') => t.replace('>', ">="),
            t if t.starts_with("return") => "return -x;".to_string(),
            t => t.replace(';', " + 1;"),
        };
        pairs.push(MutationPair { precode: t.into(), aftercode: after });
    }
    if let Some(first) = pairs.first().cloned() {
        pairs.push(first);
    }
    let head = lines[c.line_numbers[0] - 1].trim().to_string();
    if head.ends_with('{') {
        pairs.push(MutationPair { precode: head.clone(), aftercode: head.trim_end_matches('{').to_string() });
    }
    pairs.push(MutationPair { precode: "public class Calc {".into(), aftercode: "class Calc {".into() });
    format!("Here you go:\n{}", render_pairs(&pairs))
}

fn script(cfg: &PipelineConfig) -> (Vec<ScriptEntry>, Vec<PlannedTarget>) {
    let res = load_resources(cfg).unwrap();
    let targets = load_targets(cfg.targets.as_ref().unwrap()).unwrap();
    let plans: Vec<PlannedTarget> = plan_prompts(cfg, &res, &targets).into_iter().map(Result::unwrap).collect();
    let mut entries = Vec::new();
    for p in &plans {
        for (i, c) in p.chunks.iter().enumerate() {
            entries.push(MockBackend::entry(&c.prompt, reply(p, i), 100, 20));
        }
    }
    (entries, plans)
}

fn config(f: &Fixture) -> PipelineConfig {
    PipelineConfig::load(&f.root.join("mutrag.toml")).unwrap()
}

fn generate(f: &Fixture) -> (PipelineConfig, Vec<PlannedTarget>) {
    let cfg = config(f);
    let (entries, plans) = script(&cfg);
    let backend = MockBackend::from_entries(entries).unwrap();
    let targets = load_targets(cfg.targets.as_ref().unwrap()).unwrap();
    run_generate(&cfg, &load_resources(&cfg).unwrap(), &backend, &targets).unwrap();
    (cfg, plans)
}

#[test]
fn fixed_mode_end_to_end() {
    let f = fixture("fixed", "");
    let (cfg, plans) = generate(&f);
    let plan = &plans[0];
    let lines: Vec<Vec<usize>> = plan.chunks.iter().map(|c| c.chunk.line_numbers.clone()).collect();
    assert_eq!(lines, [vec![7, 8, 9], vec![3, 4, 5, 6], vec![2], vec![10, 11]]);
    assert_eq!(plan.expected(), 10);
    assert!(plan.chunks.iter().all(|c| c.examples.len() == 2));

    let summary: Vec<TargetSummary> = read_jsonl(&cfg.output_dir.join(TARGET_SUMMARY)).unwrap();
    assert_eq!(summary[0].queries, 4);
    assert_eq!(summary[0].rejected.get("out-of-chunk"), Some(&4));
    let manifest: Vec<ManifestEntry> = read_jsonl(&cfg.output_dir.join(MANIFEST)).unwrap();
    assert_eq!(manifest.len(), summary[0].pairs);

    let report = run_evaluate(&cfg).unwrap();
    assert!(report.errors.is_empty(), "{:?}", report.errors);
    let ledger = &report.bugs[0].ledger;
    assert_eq!(ledger.expected, 10);
    assert_eq!(ledger.generated.len(), manifest.len());
    assert!(ledger.duplicates.len() >= 4);
    let broken: Vec<&ManifestEntry> = manifest.iter().filter(|e| e.aftercode.trim_end().ends_with(')')).collect();
    assert!(!broken.is_empty());
    assert!(broken.iter().all(|e| !ledger.compilable.contains(&e.id)));

    let eff = report.effectiveness.as_ref().unwrap();
    assert_eq!(eff.bugs[0].mutants, ledger.useful().len());
    assert!(eff.mutation_score.unwrap() > 0.0);
    assert_eq!(report.tcp.len(), 3);
    assert!(report.tcp.iter().all(|t| t.bugs == 1));
    assert_eq!(report.cost.queries, 4);
    assert_eq!(report.cost.tokens_per_query, Some(120.0));
    assert!(cfg.output_dir.join("matrices/calc-1.matrix").exists());

    let first = fs::read(cfg.output_dir.join(REPORT_TXT)).unwrap();
    let json = fs::read(cfg.output_dir.join(REPORT_JSON)).unwrap();
    run_evaluate(&cfg).unwrap();
    assert_eq!(first, fs::read(cfg.output_dir.join(REPORT_TXT)).unwrap());
    assert_eq!(json, fs::read(cfg.output_dir.join(REPORT_JSON)).unwrap());
}

#[test]
fn buggy_mode_localizes() {
    let f = fixture("buggy", "");
    let (cfg, _) = generate(&f);
    let report = run_evaluate(&cfg).unwrap();
    assert!(report.errors.is_empty(), "{:?}", report.errors);
    assert!(report.effectiveness.is_none());
    assert_eq!(report.mbfl.len(), 2);
    for (_, m) in &report.mbfl {
        assert_eq!(m.evaluated_bugs, 1);
    }
}

#[test]
fn chunking_off_makes_one_prompt() {
    let f = fixture("fixed", "");
    let mut cfg = config(&f);
    cfg.chunking = false;
    cfg.rag = false;
    let res = load_resources(&cfg).unwrap();
    let targets = load_targets(cfg.targets.as_ref().unwrap()).unwrap();
    let plans = plan_prompts(&cfg, &res, &targets);
    let plan = plans[0].as_ref().unwrap();
    assert_eq!(plan.chunks.len(), 1);
    assert_eq!(plan.expected(), 10);
    assert!(plan.chunks[0].examples.is_empty());
}

#[test]
fn missing_reply_isolates_target() {
    let f = fixture("fixed", "");
    let cfg = config(&f);
    let targets = load_targets(cfg.targets.as_ref().unwrap()).unwrap();
    let backend = MockBackend::from_entries(Vec::new()).unwrap();
    let err = run_generate(&cfg, &load_resources(&cfg).unwrap(), &backend, &targets).unwrap_err();
    assert!(matches!(err, PipelineError::NoTargetSucceeded { failed: 1 }));
    let summary: Vec<TargetSummary> = read_jsonl(&cfg.output_dir.join(TARGET_SUMMARY)).unwrap();
    assert!(summary[0].error.as_ref().unwrap().contains("chunk 0"));
}

#[test]
fn precomputed_matrices_need_no_runner() {
    let f = fixture("fixed", "");
    let (mut cfg, _) = generate(&f);
    let with_runner = run_evaluate(&cfg).unwrap();
    let stored = f.root.join("stored");
    fs::rename(cfg.output_dir.join("matrices"), &stored).unwrap();
    cfg.commands.test = None;
    cfg.matrices_dir = Some(stored);
    let offline = run_evaluate(&cfg).unwrap();
    assert_eq!(offline.effectiveness, with_runner.effectiveness);

    cfg.matrices_dir = None;
    assert!(matches!(run_evaluate(&cfg), Err(PipelineError::NoMatrixSource)));
}

#[test]
fn validate_uses_compile_command() {
    let f = fixture("fixed", "compile = \"grep -q \\\"x = a;\\\" {source}\"");
    let (cfg, _) = generate(&f);
    let (ledgers, errors) = run_validate(&cfg).unwrap();
    assert!(errors.is_empty());
    let l = &ledgers[0];
    let manifest: Vec<ManifestEntry> = read_jsonl(&cfg.output_dir.join(MANIFEST)).unwrap();
    let init_mutants: BTreeSet<&str> = manifest
        .iter()
        .filter(|e| e.precode == "int x = a;" && e.rejection.is_none())
        .map(|e| e.id.as_str())
        .collect();
    assert!(!init_mutants.is_empty());
    for id in &init_mutants {
        assert!(!l.compilable.contains(*id));
    }
    assert!(l.compilable.len() + init_mutants.len() <= l.generated.len());
    assert!(cfg.output_dir.join("validity.txt").exists());
}
