mod sets;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mutrag_core::chunker::{check_syntax, chunk_method, parse_method, whole_method_chunk, ChunkKind, Grammar};
use mutrag_core::corpus::ingest_corpus;
use mutrag_core::embedder::{build_index, KeySide, LexicalEmbedder, Metric, EmbeddingBackend, VectorIndex};
use mutrag_core::execution::load_matrix;
use mutrag_core::mbfl::{fl_metrics, fl_stats_from_matrix, localize, render_fl_table, Method};
use mutrag_core::metrics::{effectiveness_report, render_effectiveness, BugContext, HIGH_SIMILARITY};
use mutrag_core::pipeline::{
    generate_from_config, read_jsonl, render_report, run_evaluate, run_execute, run_validate, EmbedderKind,
    PipelineConfig, PromptRecord, COUPLING, MUTANTS, PROMPTS,
};
use mutrag_core::promptgen::Mutant;
use mutrag_core::sft::{export, write_jsonl, ExportOptions, SftCandidate};
use mutrag_core::tcp::{apfd, prioritize, Strategy, DEFAULT_OMEGA};
use mutrag_core::validity::render_validity_table;

use sets::{line_numbers, read_sets, union};

#[derive(Parser)]
#[command(name = "mutrag", version, about = "Retrieval-augmented, chunked LLM mutation generation and analysis")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a bug-fix corpus file and optionally write the accepted records.
    Ingest {
        corpus: PathBuf,
        /// Write accepted records here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 1 when any record is rejected.
        #[arg(long)]
        check: bool,
    },
    /// Build or query the retrieval index.
    #[command(subcommand)]
    Rag(RagCommand),
    /// Split a method into chunks and print them as JSON.
    Chunk {
        file: PathBuf,
        /// Line number of the file's first line.
        #[arg(long, default_value_t = 1)]
        start_line: usize,
        #[arg(long, default_value = "java")]
        grammar: Grammar,
        /// Emit the whole method as one chunk.
        #[arg(long)]
        whole: bool,
    },
    /// Prompt the model for every target and materialize mutants.
    Generate(Common),
    /// Duplicate and compile checks over generated mutants.
    Validate(Common),
    /// Run the test command on every target and store kill matrices.
    Execute(Common),
    /// Mutation score, coupling, Ochiai and detection from matrix files.
    Metrics {
        #[arg(long = "matrix", required = true, num_args = 1..)]
        matrices: Vec<PathBuf>,
        /// Lines of `<bug> <test>...` naming bug-revealing tests.
        #[arg(long)]
        revealing: PathBuf,
        #[arg(long, default_value_t = HIGH_SIMILARITY)]
        threshold: f64,
    },
    /// Prioritize tests with GRK, GRD and HYB and report APFD.
    Tcp {
        #[arg(long = "matrix", required = true, num_args = 1..)]
        matrices: Vec<PathBuf>,
        /// Lines of `<bug> <test>...`; each line is one fault and its detecting tests.
        #[arg(long)]
        detection: PathBuf,
        #[arg(long, default_value_t = DEFAULT_OMEGA)]
        omega: f64,
    },
    /// Mutation-based fault localization from buggy-version matrices.
    Mbfl {
        #[arg(long = "matrix", required = true, num_args = 1..)]
        matrices: Vec<PathBuf>,
        /// Lines of `<bug> <test>...` naming tests failing on the buggy version.
        #[arg(long)]
        failing: PathBuf,
        /// Lines of `<bug> <line>...` naming faulty lines.
        #[arg(long)]
        faulty: PathBuf,
        /// Lines of `<mutant> <line>` mapping mutants to statements.
        #[arg(long)]
        statements: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
        ks: Vec<usize>,
    },
    /// Export coupled mutants as fine-tuning instances.
    ExportSft {
        #[command(flatten)]
        common: Common,
        /// Comma-separated projects to leave out.
        #[arg(long, value_delimiter = ',')]
        exclude_projects: Vec<String>,
        /// One instance per chunk instead of per mutant.
        #[arg(long)]
        grouped: bool,
        /// Defaults to `sft.jsonl` in the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Validity, execution, metrics, prioritization and localization in one report.
    Report(Common),
    /// Syntax-check a source file; usable as a compile command.
    CheckSyntax {
        file: PathBuf,
        #[arg(long, default_value = "java")]
        grammar: Grammar,
    },
}

#[derive(Subcommand)]
enum RagCommand {
    /// Embed every corpus pair into an index file.
    Build {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        metric: Option<Metric>,
        #[arg(long)]
        key_side: Option<KeySide>,
        #[arg(long)]
        dimension: Option<usize>,
    },
    /// Nearest corpus pairs for a code snippet.
    Query {
        #[arg(long)]
        index: PathBuf,
        /// File holding the probe code.
        #[arg(long)]
        probe: PathBuf,
        #[arg(short, default_value_t = 6)]
        n: usize,
        #[arg(long)]
        metric: Option<Metric>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value = "mutrag.toml")]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Prompt with the whole method instead of chunks.
    #[arg(long)]
    no_chunking: bool,
    /// Prompt without retrieved examples.
    #[arg(long)]
    no_rag: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(t) = &self.targets {
            cfg.targets = Some(t.clone());
        }
        if self.no_chunking {
            cfg.chunking = false;
        }
        if self.no_rag {
            cfg.rag = false;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn optional_config(path: &Option<PathBuf>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(PipelineConfig { rag: false, ..PipelineConfig::default() }),
    }
}

fn ingest(corpus: &Path, out: Option<&Path>, check: bool) -> Result<ExitCode> {
    let ingested = ingest_corpus(corpus)?;
    for s in &ingested.skipped {
        eprintln!("line {}{}: {}", s.line, s.id.as_ref().map(|i| format!(" ({i})")).unwrap_or_default(), s.reason);
    }
    println!("accepted {} rejected {}", ingested.corpus.len(), ingested.skipped.len());
    if let Some(out) = out {
        let mut w = io::BufWriter::new(fs::File::create(out)?);
        for p in ingested.corpus.iter() {
            serde_json::to_writer(&mut w, &p.record())?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    Ok(if check && !ingested.skipped.is_empty() { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn rag(cmd: RagCommand) -> Result<()> {
    match cmd {
        RagCommand::Build { corpus, index, config, metric, key_side, dimension } => {
            let mut cfg = optional_config(&config)?;
            if let Some(d) = dimension {
                cfg.embedder.dimension = d;
            }
            let corpus = corpus.or(cfg.corpus.clone()).ok_or_else(|| anyhow!("no corpus given"))?;
            let ingested = ingest_corpus(&corpus)?;
            let embedder = cfg.embedder.build()?;
            let built = build_index(
                &ingested.corpus,
                key_side.unwrap_or(cfg.key_side),
                embedder.as_ref(),
                metric.unwrap_or(cfg.metric),
            )?;
            built.save(&index)?;
            println!("indexed {} pairs with {} (d={})", built.len(), built.backend_id(), built.dimension());
        }
        RagCommand::Query { index, probe, n, metric, config } => {
            let cfg = optional_config(&config)?;
            let mut idx = VectorIndex::load(&index)?;
            if let Some(m) = metric {
                idx = idx.with_metric(m);
            }
            let embedder: Box<dyn EmbeddingBackend> = match cfg.embedder.kind {
                EmbedderKind::Lexical => Box::new(LexicalEmbedder::new(idx.dimension())),
                EmbedderKind::Remote => cfg.embedder.build()?,
            };
            let code = fs::read_to_string(&probe).with_context(|| format!("reading {}", probe.display()))?;
            let hits = idx.query(&embedder.embed(&code)?, n)?;
            for (rank, h) in hits.iter().enumerate() {
                println!("{}\t{}\t{:.6}", rank + 1, h.id, h.score);
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ChunkView {
    id: usize,
    kind: ChunkKind,
    ranges: Vec<(usize, usize)>,
    line_numbers: Vec<usize>,
    text: String,
}

fn chunk(file: &Path, start_line: usize, grammar: Grammar, whole: bool) -> Result<()> {
    let source = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let method = parse_method(&source, start_line, grammar)?;
    let chunks = if whole { vec![whole_method_chunk(&method)] } else { chunk_method(&method) };
    let views: Vec<ChunkView> = chunks
        .into_iter()
        .map(|c| ChunkView { id: c.id, kind: c.kind, ranges: c.ranges(), line_numbers: c.line_numbers, text: c.text })
        .collect();
    println!("{}", serde_json::to_string_pretty(&views)?);
    Ok(())
}

fn load_matrices(paths: &[PathBuf]) -> Result<Vec<mutrag_core::execution::KillMatrix>> {
    paths.iter().map(|p| load_matrix(p).with_context(|| format!("loading {}", p.display()))).collect()
}

fn metrics(matrices: &[PathBuf], revealing: &Path, threshold: f64) -> Result<()> {
    let sets = read_sets(revealing)?;
    let ctxs = load_matrices(matrices)?
        .into_iter()
        .map(|m| {
            let r = union(&sets, &m.bug_id);
            BugContext::new(m, r).map_err(anyhow::Error::from)
        })
        .collect::<Result<Vec<_>>>()?;
    print!("{}", render_effectiveness(&effectiveness_report(&ctxs, threshold)));
    Ok(())
}

fn tcp(matrices: &[PathBuf], detection: &Path, omega: f64) -> Result<()> {
    let sets = read_sets(detection)?;
    let strategies = [Strategy::Grk, Strategy::Grd, Strategy::Hyb { omega }];
    let mut totals: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    println!("{:<24} {:>10} {:>8}  order", "bug", "strategy", "APFD");
    for m in load_matrices(matrices)? {
        let faults = sets.get(&m.bug_id).cloned().unwrap_or_default();
        for st in strategies {
            let p = prioritize(&m, st)?;
            let v = if faults.is_empty() { None } else { Some(apfd(&p.order, &faults)?) };
            if let Some(v) = v {
                totals.entry(st.to_string()).or_default().push(v);
            }
            println!(
                "{:<24} {:>10} {:>8}  {}",
                m.bug_id,
                st.to_string(),
                v.map_or("-".into(), |v| format!("{v:.4}")),
                p.order.join(",")
            );
        }
    }
    println!();
    for st in strategies {
        let name = st.to_string();
        let vals = totals.get(&name).cloned().unwrap_or_default();
        let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        println!("{:<10} mean APFD {} over {} bugs", name, mean.map_or("-".into(), |v| format!("{v:.4}")), vals.len());
    }
    Ok(())
}

fn mbfl(matrices: &[PathBuf], failing: &Path, faulty: &Path, statements: &Path, ks: &[usize]) -> Result<()> {
    let failing = read_sets(failing)?;
    let faulty = read_sets(faulty)?;
    let mut stmt = BTreeMap::new();
    for (mutant, lines) in read_sets(statements)? {
        let lines = line_numbers(&lines.into_iter().flatten().collect())?;
        match lines.iter().collect::<Vec<_>>().as_slice() {
            [l] => stmt.insert(mutant, **l),
            _ => bail!("mutant {mutant} must map to exactly one line"),
        };
    }
    let mut reports: BTreeMap<Method, Vec<_>> = BTreeMap::new();
    for m in load_matrices(matrices)? {
        let fault_lines = line_numbers(&union(&faulty, &m.bug_id))?;
        let mut universe: BTreeSet<usize> = m.mutants().iter().filter_map(|id| stmt.get(id).copied()).collect();
        universe.extend(&fault_lines);
        let (stats, g) = fl_stats_from_matrix(&m, &union(&failing, &m.bug_id), &stmt)
            .with_context(|| format!("bug {}", m.bug_id))?;
        for method in Method::ALL {
            reports.entry(method).or_default().push(localize(&m.bug_id, &stats, &g, &universe, &fault_lines, method));
        }
    }
    let rows: Vec<_> = reports.into_iter().map(|(m, r)| (m, fl_metrics(&r, ks))).collect();
    print!("{}", render_fl_table(&rows));
    Ok(())
}

fn export_sft(cfg: &PipelineConfig, exclude: Vec<String>, grouped: bool, output: Option<PathBuf>) -> Result<()> {
    #[derive(serde::Deserialize)]
    struct Coupling {
        mutant_id: String,
        project: String,
        coupled: bool,
    }
    let out = &cfg.output_dir;
    let mutants: Vec<Mutant> = read_jsonl(&out.join(MUTANTS))?;
    let coupling: Vec<Coupling> = read_jsonl(&out.join(COUPLING)).context("run `report` first")?;
    let prompts: BTreeMap<(String, usize), String> = read_jsonl::<PromptRecord>(&out.join(PROMPTS))?
        .into_iter()
        .map(|p| ((p.bug_id, p.chunk_id), p.prompt))
        .collect();
    let by_id: BTreeMap<&str, &Mutant> = mutants.iter().map(|m| (m.id.as_str(), m)).collect();
    let candidates: Vec<SftCandidate<'_>> = coupling
        .iter()
        .filter_map(|c| by_id.get(c.mutant_id.as_str()).map(|m| SftCandidate { mutant: m, project: c.project.clone(), coupled: c.coupled }))
        .collect();
    let opts = ExportOptions { grouped, exclude_projects: exclude.into_iter().collect() };
    let result = export(&candidates, &prompts, &opts);
    for s in &result.skipped {
        eprintln!("skipped {}: {}", s.mutant_id, s.reason);
    }
    let path = output.unwrap_or_else(|| out.join("sft.jsonl"));
    write_jsonl(&result.instances, io::BufWriter::new(fs::File::create(&path)?))?;
    println!(
        "wrote {} instances to {} ({} uncoupled, {} excluded by project, {} skipped)",
        result.instances.len(),
        path.display(),
        result.uncoupled,
        result.excluded_by_project,
        result.skipped.len()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest { corpus, out, check } => return ingest(&corpus, out.as_deref(), check),
        Command::Rag(cmd) => rag(cmd)?,
        Command::Chunk { file, start_line, grammar, whole } => chunk(&file, start_line, grammar, whole)?,
        Command::Generate(c) => {
            let s = generate_from_config(&c.load()?)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
            if s.failed > 0 {
                eprintln!("{} of {} targets failed", s.failed, s.targets);
            }
        }
        Command::Validate(c) => {
            let (ledgers, errors) = run_validate(&c.load()?)?;
            print!("{}", render_validity_table(&ledgers));
            for (bug, e) in errors {
                eprintln!("{bug}: {e}");
            }
        }
        Command::Execute(c) => {
            let results = run_execute(&c.load()?)?;
            let failed = results.iter().filter(|(_, r)| r.is_err()).count();
            for (bug, r) in &results {
                match r {
                    Ok(m) => println!("{bug}: {} mutants x {} tests", m.mutants().len(), m.tests().len()),
                    Err(e) => println!("{bug}: error: {e}"),
                }
            }
            if failed > 0 && failed == results.len() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Metrics { matrices, revealing, threshold } => metrics(&matrices, &revealing, threshold)?,
        Command::Tcp { matrices, detection, omega } => tcp(&matrices, &detection, omega)?,
        Command::Mbfl { matrices, failing, faulty, statements, ks } => mbfl(&matrices, &failing, &faulty, &statements, &ks)?,
        Command::ExportSft { common, exclude_projects, grouped, output } => {
            export_sft(&common.load()?, exclude_projects, grouped, output)?
        }
        Command::Report(c) => print!("{}", render_report(&run_evaluate(&c.load()?)?)),
        Command::CheckSyntax { file, grammar } => {
            let source = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            if let Err(e) = check_syntax(&source, grammar) {
                eprintln!("{}: {e}", file.display());
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
