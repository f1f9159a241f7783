mod config;

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use molrag_core::annostore::AnnotationStore;
use molrag_core::backends::{CachedBackend, ChatBackend, HttpBackend, MockBackend, MockScript};
use molrag_core::embed::{load_embedding_table, EmbeddingProvider, EmbeddingTable};
use molrag_core::evalharness::{load_dataset, run_eval_logged, split_overlap, Dataset, EvalResult, EvalTask, Judge, Schema};
use molrag_core::kgstore::{ingest_triplets, IngestReport, KnowledgeGraph};
use molrag_core::pipeline::{
    run_query, CaptionTool, CommandTool, Deps, PipelineConfig, StaticTool, SystemClock, TaskSpec, TraceLog,
};

use config::FileConfig;

#[derive(Parser)]
#[command(name = "molrag", version, about = "Knowledge-graph augmented molecular question answering")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Global {
    /// TOML config file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Chat backend
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Mock response script (with --backend mock)
    #[arg(long, global = true)]
    script: Option<PathBuf>,
    /// Chat-completions endpoint URL (with --backend http)
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Model name sent to the endpoint
    #[arg(long, global = true)]
    model: Option<String>,
    /// Number of related drugs
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Maximum two-hop path lines in prompts
    #[arg(long, global = true)]
    path_cap: Option<usize>,
    /// Response cache directory
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Concurrent queries during eval
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Exit non-zero when any eval example fails
    #[arg(long, global = true)]
    strict: bool,
    /// KG snapshot directory or triplet TSV
    #[arg(long, global = true)]
    kg: Option<PathBuf>,
    /// Annotation snapshot or TSV
    #[arg(long, global = true)]
    annotations: Option<PathBuf>,
    /// Embedding table; fingerprint vectors are used when absent
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    /// Trace log (JSON lines)
    #[arg(long, global = true)]
    traces: Option<PathBuf>,
    /// Captioning tool backed by a smiles/caption TSV
    #[arg(long, global = true)]
    tool_captions: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Mock,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a triplet TSV into a KG snapshot directory
    IngestKg {
        tsv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest a caption TSV into an annotation snapshot
    IngestAnnotations {
        tsv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate an embedding table and store a normalized copy
    ImportEmbeddings {
        file: PathBuf,
        /// Destination; defaults to the configured embeddings path
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer one question about one molecule
    Query {
        #[arg(long)]
        smiles: String,
        /// Task id (see `molrag stats --tasks`)
        #[arg(long)]
        task: String,
    },
    /// Evaluate a dataset
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        schema: SchemaArg,
        /// Task id, or `targets` for both target directions
        #[arg(long)]
        task: String,
        /// Evaluate overlap and no-overlap partitions separately
        #[arg(long)]
        split_overlap: bool,
        /// Ask the backend whether annotations suffice when splitting
        #[arg(long, requires = "split_overlap")]
        judge: bool,
        /// Results file
        #[arg(long)]
        out: Option<PathBuf>,
        /// Caption TSV for captioning datasets
        #[arg(long)]
        captions_out: Option<PathBuf>,
    },
    /// Print knowledge graph and annotation statistics
    Stats {
        /// List builtin task ids instead
        #[arg(long)]
        tasks: bool,
    },
    /// Print a stored trace
    TraceShow { trace_id: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemaArg {
    Toxicity,
    Targets,
    Captioning,
}

impl From<SchemaArg> for Schema {
    fn from(s: SchemaArg) -> Schema {
        match s {
            SchemaArg::Toxicity => Schema::Toxicity,
            SchemaArg::Targets => Schema::Targets,
            SchemaArg::Captioning => Schema::Captioning,
        }
    }
}

/// File config with flag overrides applied.
struct Settings {
    file: FileConfig,
    backend: BackendKind,
    parallelism: usize,
    strict: bool,
}

impl Settings {
    fn new(g: &Global) -> Result<Self> {
        let mut file = match &g.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let d = &mut file.data;
        for (slot, flag) in [
            (&mut d.kg, &g.kg),
            (&mut d.annotations, &g.annotations),
            (&mut d.embeddings, &g.embeddings),
            (&mut d.traces, &g.traces),
            (&mut d.tool_captions, &g.tool_captions),
            (&mut file.backend.script, &g.script),
            (&mut file.backend.cache_dir, &g.cache_dir),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        if let Some(e) = &g.endpoint {
            file.backend.http.endpoint = e.clone();
        }
        if let Some(m) = &g.model {
            file.backend.http.model = m.clone();
        }
        if let Some(k) = g.k {
            file.pipeline.k = k;
        }
        if let Some(c) = g.path_cap {
            file.pipeline.path_cap = c;
        }
        let backend = match (g.backend, file.backend.kind.as_deref()) {
            (Some(b), _) => b,
            (None, None | Some("mock")) => BackendKind::Mock,
            (None, Some("http")) => BackendKind::Http,
            (None, Some(other)) => bail!("unknown backend kind {other:?} in config"),
        };
        Ok(Settings {
            parallelism: g.parallelism.unwrap_or(file.eval.parallelism),
            strict: g.strict || file.eval.strict,
            backend,
            file,
        })
    }

    fn kg_path(&self) -> Result<&Path> {
        self.file.data.kg.as_deref().ok_or_else(|| anyhow!("no knowledge graph given (--kg)"))
    }

    fn load_kg(&self) -> Result<KnowledgeGraph> {
        load_kg(self.kg_path()?).map(|(kg, _)| kg)
    }

    fn load_annotations(&self) -> Result<Option<AnnotationStore>> {
        self.file
            .data
            .annotations
            .as_deref()
            .map(|p| AnnotationStore::load(p).with_context(|| format!("loading {}", p.display())))
            .transpose()
    }

    fn load_embeddings(&self, kg: &KnowledgeGraph) -> Result<EmbeddingProvider> {
        Ok(match &self.file.data.embeddings {
            None => EmbeddingProvider::fingerprint(kg),
            Some(p) => EmbeddingProvider::Table(read_table(p)?),
        })
    }

    fn load_tool(&self) -> Result<Option<Box<dyn CaptionTool>>> {
        let d = &self.file.data;
        if let Some(p) = &d.tool_captions {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            return Ok(Some(Box::new(StaticTool::load(BufReader::new(f))?)));
        }
        if let Some(cmd) = &d.captioner {
            let (program, args) = cmd.split_first().ok_or_else(|| anyhow!("empty captioner command"))?;
            return Ok(Some(Box::new(CommandTool {
                program: program.into(),
                args: args.to_vec(),
            })));
        }
        Ok(None)
    }

    fn backend(&self) -> Result<Arc<dyn ChatBackend>> {
        let b = &self.file.backend;
        let inner: Arc<dyn ChatBackend> = match self.backend {
            BackendKind::Mock => {
                let script = b.script.as_deref().ok_or_else(|| anyhow!("--backend mock needs --script"))?;
                let script = MockScript::load(script).with_context(|| format!("loading {}", script.display()))?;
                Arc::new(MockBackend::new(script))
            }
            BackendKind::Http => Arc::new(HttpBackend::new(b.http.clone())?),
        };
        Ok(match &b.cache_dir {
            None => inner,
            Some(dir) => Arc::new(CachedBackend::new(inner, dir)?),
        })
    }

    fn trace_log(&self) -> TraceLog {
        TraceLog::new(self.file.data.traces.clone().unwrap_or_else(|| "traces.jsonl".into()))
    }

    fn pipeline(&self) -> PipelineConfig {
        self.file.pipeline.clone()
    }
}

fn load_kg(path: &Path) -> Result<(KnowledgeGraph, Option<IngestReport>)> {
    if path.is_dir() {
        let kg = KnowledgeGraph::load_snapshot(path).with_context(|| format!("loading snapshot {}", path.display()))?;
        Ok((kg, None))
    } else {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let (kg, report) = ingest_triplets(BufReader::new(f))?;
        Ok((kg, Some(report)))
    }
}

fn read_table(path: &Path) -> Result<EmbeddingTable> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(load_embedding_table(BufReader::new(f))?)
}

fn print_report(out: &mut impl Write, report: &IngestReport) -> io::Result<()> {
    writeln!(out, "triplets: {}", report.triplet_count)?;
    writeln!(out, "entity kinds: {}", report.entity_counts.len())?;
    for (kind, n) in &report.entity_counts {
        writeln!(out, "  {kind}: {n}")?;
    }
    writeln!(out, "relations: {}", report.relation_counts.len())?;
    for (rel, n) in &report.relation_counts {
        writeln!(out, "  {rel}: {n}")?;
    }
    if report.duplicate_rows + report.reciprocal_rows + report.rejected_lines.len() > 0 {
        writeln!(out, "duplicate rows: {}", report.duplicate_rows)?;
        writeln!(out, "reciprocal rows: {}", report.reciprocal_rows)?;
        writeln!(out, "rejected lines: {}", report.rejected_lines.len())?;
    }
    Ok(())
}

fn print_store(out: &mut impl Write, store: &AnnotationStore) -> io::Result<()> {
    let s = store.stats();
    writeln!(out, "molecules: {}", s.molecule_count)?;
    writeln!(out, "captions: {}", s.caption_count)?;
    writeln!(out, "mean captions per molecule: {:.3}", s.mean_captions)?;
    writeln!(out, "unparseable rows: {}", s.unparseable_rows)?;
    writeln!(out, "duplicate rows: {}", s.duplicate_rows)
}

fn eval_part(
    label: &str,
    deps: &Deps,
    ds: &Dataset,
    task: &EvalTask,
    settings: &Settings,
    log: &TraceLog,
    out: &mut impl Write,
) -> Result<Option<EvalResult>> {
    if ds.examples.is_empty() {
        writeln!(out, "{}: no examples", label.trim_end())?;
        return Ok(None);
    }
    let r = run_eval_logged(deps, ds, task, settings.parallelism, Some(log))?;
    let metric = match r.metric {
        Some(m) => format!("{m:.4}"),
        None => "n/a".into(),
    };
    let name = match r.metric_kind {
        molrag_core::evalharness::MetricKind::MacroF1 => "Macro-F1",
        molrag_core::evalharness::MetricKind::MeanPrecision => "precision@k",
        molrag_core::evalharness::MetricKind::None => "metric",
    };
    writeln!(out, "{label}{name}: {metric} (n={}, errors={})", r.n, r.errors)?;
    Ok(Some(r))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let settings = Settings::new(&cli.global)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::IngestKg { tsv, out: dest } => {
            let f = File::open(&tsv).with_context(|| format!("opening {}", tsv.display()))?;
            let (kg, report) = ingest_triplets(BufReader::new(f))?;
            kg.write_snapshot(&dest)?;
            print_report(&mut out, &report)?;
            writeln!(out, "snapshot: {}", dest.display())?;
        }
        Command::IngestAnnotations { tsv, out: dest } => {
            let store = AnnotationStore::load(&tsv).with_context(|| format!("loading {}", tsv.display()))?;
            store.save(&dest)?;
            print_store(&mut out, &store)?;
            writeln!(out, "snapshot: {}", dest.display())?;
        }
        Command::ImportEmbeddings { file, out: dest } => {
            let table = read_table(&file)?;
            let dest = dest
                .or_else(|| settings.file.data.embeddings.clone())
                .ok_or_else(|| anyhow!("no destination (--out or --embeddings)"))?;
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent)?;
            }
            let mut w = BufWriter::new(File::create(&dest)?);
            writeln!(w, "id {}", table.dim())?;
            for (id, v) in table.entries() {
                let row: Vec<String> = v.iter().map(f64::to_string).collect();
                writeln!(w, "{id} {}", row.join(" "))?;
            }
            w.flush()?;
            writeln!(out, "vectors: {}", table.len())?;
            writeln!(out, "dimension: {}", table.dim())?;
            writeln!(out, "rejected: {}", table.rejected().len())?;
            if let Some(kg) = settings.file.data.kg.as_ref().map(|_| settings.load_kg()).transpose()? {
                let missing = kg.drugs().filter(|d| table.get(&d.id).is_none()).count();
                writeln!(out, "KG drugs without a vector: {missing}")?;
            }
            writeln!(out, "written: {}", dest.display())?;
        }
        Command::Query { smiles, task } => {
            let task = TaskSpec::builtin(&task).ok_or_else(|| anyhow!("unknown task {task:?}"))?;
            let kg = settings.load_kg()?;
            let store = settings.load_annotations()?;
            let embeddings = settings.load_embeddings(&kg)?;
            let tool = settings.load_tool()?;
            let backend = settings.backend()?;
            let clock = SystemClock::new();
            let deps = Deps {
                kg: &kg,
                annotations: store.as_ref(),
                embeddings: &embeddings,
                backend: backend.as_ref(),
                captioner: tool.as_deref(),
                config: settings.pipeline(),
                clock: &clock,
            };
            let trace = run_query(&deps, &smiles, &task)?;
            let log = settings.trace_log();
            log.append(&trace)?;
            for w in &trace.warnings {
                log::warn!("{w}");
            }
            writeln!(out, "answer: {}", trace.answer.summary())?;
            if let molrag_core::pipeline::Answer::YesNo { reason, .. } = &trace.answer {
                writeln!(out, "reason: {reason}")?;
            }
            writeln!(out, "trace: {} ({})", trace.trace_id, log.path().display())?;
        }
        Command::Eval {
            dataset,
            schema,
            task,
            split_overlap: split,
            judge,
            out: results,
            captions_out,
        } => {
            let task = EvalTask::from_id(&task)?;
            let ds = load_dataset(&dataset, schema.into()).with_context(|| format!("loading {}", dataset.display()))?;
            if !ds.rejected.is_empty() {
                log::warn!("{} dataset rows rejected", ds.rejected.len());
            }
            let kg = settings.load_kg()?;
            let store = settings.load_annotations()?;
            let embeddings = settings.load_embeddings(&kg)?;
            let tool = settings.load_tool()?;
            let backend = settings.backend()?;
            let clock = SystemClock::new();
            let deps = Deps {
                kg: &kg,
                annotations: store.as_ref(),
                embeddings: &embeddings,
                backend: backend.as_ref(),
                captioner: tool.as_deref(),
                config: settings.pipeline(),
                clock: &clock,
            };
            let log = settings.trace_log();
            let mut parts = Vec::new();
            if split {
                let judge_task = match &task {
                    EvalTask::Single(t) => t.clone(),
                    EvalTask::Targets { activate, .. } => activate.clone(),
                };
                let judge = judge.then(|| Judge {
                    backend: backend.as_ref(),
                    task: &judge_task,
                });
                let s = split_overlap(&ds.examples, &kg, store.as_ref(), judge.as_ref());
                if s.relaxed {
                    writeln!(out, "overlap decided by annotation presence for unjudged examples")?;
                }
                for (label, examples) in [("overlap", s.overlap), ("no-overlap", s.no_overlap)] {
                    let sub = Dataset {
                        schema: ds.schema,
                        examples,
                        rejected: Vec::new(),
                    };
                    if let Some(r) = eval_part(&format!("{label} "), &deps, &sub, &task, &settings, &log, &mut out)? {
                        parts.push((label, r));
                    }
                }
            } else if let Some(r) = eval_part("", &deps, &ds, &task, &settings, &log, &mut out)? {
                parts.push(("all", r));
            }
            if let Some(path) = &results {
                let mut w = BufWriter::new(File::create(path)?);
                for (i, (label, r)) in parts.iter().enumerate() {
                    if i > 0 {
                        writeln!(w)?;
                    }
                    writeln!(w, "split\t{label}")?;
                    r.write_results(&mut w)?;
                }
                w.flush()?;
                writeln!(out, "results: {}", path.display())?;
            }
            if let Some(path) = &captions_out {
                let mut w = BufWriter::new(File::create(path)?);
                for (i, (_, r)) in parts.iter().enumerate() {
                    let mut buf = Vec::new();
                    r.write_captions(&mut buf)?;
                    let text = String::from_utf8(buf).expect("utf-8 captions");
                    let body = if i == 0 { &text[..] } else { text.split_once('\n').map_or("", |x| x.1) };
                    w.write_all(body.as_bytes())?;
                }
                w.flush()?;
                writeln!(out, "captions: {}", path.display())?;
            }
            let errors: usize = parts.iter().map(|(_, r)| r.errors).sum();
            if settings.strict && errors > 0 {
                eprintln!("error: {errors} examples failed");
                return Ok(ExitCode::from(1));
            }
        }
        Command::Stats { tasks } => {
            if tasks {
                for t in TaskSpec::builtins() {
                    writeln!(out, "{}\t{}", t.id, t.description)?;
                }
                writeln!(out, "targets\tboth target directions (eval only)")?;
                return Ok(ExitCode::SUCCESS);
            }
            let mut shown = false;
            if let Some(path) = &settings.file.data.kg {
                let (kg, report) = load_kg(path)?;
                print_report(&mut out, &report.unwrap_or_else(|| kg.report()))?;
                writeln!(out, "drugs with SMILES: {}", kg.drugs().filter(|d| d.smiles.is_some()).count())?;
                shown = true;
            }
            if let Some(store) = settings.load_annotations()? {
                print_store(&mut out, &store)?;
                shown = true;
            }
            if !shown {
                bail!("nothing to report; pass --kg and/or --annotations");
            }
        }
        Command::TraceShow { trace_id } => {
            let log = settings.trace_log();
            match TraceLog::find(log.path(), &trace_id)? {
                Some(t) => writeln!(out, "{}", serde_json::to_string_pretty(&t)?)?,
                None => bail!("trace {trace_id} not found in {}", log.path().display()),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e)
            if e
                .downcast_ref::<io::Error>()
                .is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
