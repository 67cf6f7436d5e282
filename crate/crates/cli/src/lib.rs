//! `gred prepare | run | eval`.
//!
//! Exit codes: 0 success, 1 finished with recorded failures, 2 configuration
//! or input error.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gred_core::llm::{ChatBackend, GenerationParams, RecordingBackend, RemoteChat, ReplayBackend, ScriptedBackend};
use gred_core::pipeline::{read_traces, score_traces, Pipeline, PipelineConfig, TraceWriter, TRACES_FILE};
use gred_core::prepare::{annotate_databases, extend_cache, load_prepared, PrepareReport, ANNOTATIONS_FILE, CACHE_FILE};
use gred_core::schemadb::{Dataset, Example};
use gred_core::transport::{HttpTransport, ReqwestTransport, RetryPolicy};
use gred_core::vectorlib::{Embedder, LocalEmbedder, RemoteEmbedder};

pub use config::{BackendSpec, Config, EmbedderKind};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const PREPARE_REPORT_FILE: &str = "prepare_report.json";

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURES: u8 = 1;
pub const EXIT_INPUT: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "gred", version, about = "Retrieval-augmented text-to-visualization runner")]
pub struct Cli {
    /// Log progress at info level (debug with -vv).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the embedding cache and database annotations.
    Prepare(PrepareArgs),
    /// Run the pipeline over a split and write traces.
    Run(RunArgs),
    /// Score traces against the gold DVQs.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// remote | scripted:<file> | replay:<file>
    #[arg(long, default_value = "remote")]
    pub backend: BackendSpec,
    /// Append every reply to this replay cache.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Shuffle seed, used when the dataset has a single examples.jsonl.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory of `gred prepare`.
    #[arg(long)]
    pub prep: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub no_retune: bool,
    #[arg(long)]
    pub no_debug: bool,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trace file or a run directory containing traces.jsonl.
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path; defaults to report.json beside the traces.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    backend: &'a BackendSpec,
    config: &'a Config,
    dataset: &'a Path,
    #[serde(skip_serializing_if = "Option::is_none")]
    prep: Option<&'a Path>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<SplitName>,
    output_dir: &'a Path,
    started_unix: u64,
    finished_unix: u64,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn resolve_config(common: &Common) -> Result<Config> {
    let mut cfg = Config::load(common.config.as_deref())?;
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn retry_policy(cfg: &Config) -> RetryPolicy {
    RetryPolicy {
        max_attempts: cfg.max_attempts,
        base_delay: Duration::from_millis(500),
        timeout: Duration::from_secs(cfg.timeout_secs),
    }
}

fn transport() -> Result<Arc<dyn HttpTransport>> {
    Ok(Arc::new(ReqwestTransport::new().context("building HTTP client")?))
}

pub fn make_embedder(cfg: &Config) -> Result<Box<dyn Embedder>> {
    Ok(match cfg.embedder {
        EmbedderKind::Local => Box::new(LocalEmbedder::new(cfg.local_dim)),
        EmbedderKind::Remote => Box::new(
            RemoteEmbedder::new(
                transport()?,
                cfg.base_url.clone(),
                Some(cfg.api_key()?),
                cfg.embedding_model.clone(),
                cfg.max_in_flight,
            )
            .with_policy(retry_policy(cfg)),
        ),
    })
}

pub fn make_backend(spec: &BackendSpec, cfg: &Config, record: Option<&Path>) -> Result<Arc<dyn ChatBackend>> {
    let inner: Arc<dyn ChatBackend> = match spec {
        BackendSpec::Remote => Arc::new(
            RemoteChat::new(transport()?, cfg.base_url.clone(), Some(cfg.api_key()?), cfg.max_in_flight)
                .with_policy(retry_policy(cfg)),
        ),
        BackendSpec::Scripted(p) => Arc::new(ScriptedBackend::load(Path::new(p))?),
        BackendSpec::Replay(p) => Arc::new(
            ReplayBackend::load(Path::new(p)).with_context(|| format!("loading replay cache {p}"))?,
        ),
    };
    Ok(match record {
        Some(path) => Arc::new(RecordingBackend::new(inner, path)),
        None => inner,
    })
}

fn load_dataset(dir: &Path, seed: u64) -> Result<Dataset> {
    Dataset::load(dir, seed).with_context(|| format!("loading dataset {}", dir.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Exit code of a command that ran to completion; errors map to 2.
struct Outcome(u8);

fn prepare(args: &PrepareArgs) -> Result<Outcome> {
    let started = unix_now();
    let cfg = resolve_config(&args.common)?;
    let data = load_dataset(&args.common.dataset, cfg.seed)?;
    create_dir(&args.out)?;
    let embedder = make_embedder(&cfg)?;
    let backend = make_backend(&args.common.backend, &cfg, args.common.record.as_deref())?;

    let mut report = PrepareReport::default();
    extend_cache(&args.out.join(CACHE_FILE), &data.split.train, embedder.as_ref(), cfg.workers, &mut report)?;
    annotate_databases(
        &args.out.join(ANNOTATIONS_FILE),
        &data.schemas,
        backend.as_ref(),
        &GenerationParams::annotation(cfg.chat_model.clone()),
        cfg.workers,
        &mut report,
    )?;
    write_json(&args.out.join(PREPARE_REPORT_FILE), &report)?;
    write_json(
        &args.out.join(MANIFEST_FILE),
        &Manifest {
            command: "prepare",
            version: env!("CARGO_PKG_VERSION"),
            backend: &args.common.backend,
            config: &cfg,
            dataset: &args.common.dataset,
            prep: None,
            split: None,
            output_dir: &args.out,
            started_unix: started,
            finished_unix: unix_now(),
        },
    )?;
    println!(
        "embedded {} (skipped {}), annotated {} (skipped {}), failures {}",
        report.embedded,
        report.embeddings_skipped,
        report.annotated,
        report.annotations_skipped,
        report.failures.len()
    );
    for f in &report.failures {
        eprintln!("failed: {}: {}", f.item, f.error);
    }
    Ok(Outcome(if report.failures.is_empty() { EXIT_OK } else { EXIT_FAILURES }))
}

fn split_of(data: &Dataset, split: SplitName) -> &[Example] {
    match split {
        SplitName::Train => &data.split.train,
        SplitName::Dev => &data.split.dev,
        SplitName::Test => &data.split.test,
    }
}

fn run(args: &RunArgs) -> Result<Outcome> {
    let started = unix_now();
    let mut cfg = resolve_config(&args.common)?;
    if let Some(k) = args.k {
        cfg.k = k;
    }
    cfg.retune &= !args.no_retune;
    cfg.debug &= !args.no_debug;
    cfg.validate()?;

    let data = load_dataset(&args.common.dataset, cfg.seed)?;
    let (library, annotations) =
        load_prepared(&args.prep).with_context(|| format!("loading preparation from {}", args.prep.display()))?;
    let embedder = make_embedder(&cfg)?;
    if embedder.model_id() != library.model_id() {
        bail!(
            "embedding cache was built with {:?} but the configured embedder is {:?}",
            library.model_id(),
            embedder.model_id()
        );
    }
    let backend = make_backend(&args.common.backend, &cfg, args.common.record.as_deref())?;
    let pipeline = Pipeline::new(
        PipelineConfig {
            k: cfg.k,
            enable_retune: cfg.retune,
            enable_debug: cfg.debug,
            gen_params: GenerationParams::pipeline(cfg.chat_model.clone()),
        },
        &library,
        &data.split.train,
        &data.schemas,
        &annotations,
        embedder.as_ref(),
        backend.as_ref(),
    )?;

    create_dir(&args.out)?;
    let mut writer = TraceWriter::open(&args.out)?;
    let todo: Vec<Example> = split_of(&data, args.split)
        .iter()
        .filter(|e| !writer.is_done(&e.example_id))
        .cloned()
        .collect();
    let skipped = split_of(&data, args.split).len() - todo.len();
    let mut failed = 0usize;
    pipeline.run_corpus(&todo, cfg.workers, |trace| {
        if let Some(err) = &trace.error {
            eprintln!("failed: {}: {err}", trace.example_id);
            failed += 1;
        }
        writer.write(&trace)
    })?;
    write_json(
        &args.out.join(MANIFEST_FILE),
        &Manifest {
            command: "run",
            version: env!("CARGO_PKG_VERSION"),
            backend: &args.common.backend,
            config: &cfg,
            dataset: &args.common.dataset,
            prep: Some(&args.prep),
            split: Some(args.split),
            output_dir: &args.out,
            started_unix: started,
            finished_unix: unix_now(),
        },
    )?;
    println!("ran {} example(s), skipped {skipped} already done, {failed} failed", todo.len());
    Ok(Outcome(if failed == 0 { EXIT_OK } else { EXIT_FAILURES }))
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    backend: String,
    summary: &'a gred_core::EvalSummary,
    duplicates: usize,
    failed: usize,
    records: &'a [gred_core::MatchRecord],
}

#[derive(Debug, Serialize)]
struct EvalManifest<'a> {
    command: &'a str,
    version: &'a str,
    traces: &'a Path,
    dataset: &'a Path,
    seed: u64,
    report: &'a Path,
    finished_unix: u64,
}

fn backend_mode(dir: &Path) -> String {
    fs::read_to_string(dir.join(MANIFEST_FILE))
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| v["backend"]["mode"].as_str().map(str::to_string))
        .unwrap_or_else(|| "unknown".into())
}

fn eval(args: &EvalArgs) -> Result<Outcome> {
    let traces_path = if args.traces.is_dir() {
        args.traces.join(TRACES_FILE)
    } else {
        args.traces.clone()
    };
    let dir = traces_path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let traces = read_traces(&traces_path).with_context(|| format!("reading traces {}", traces_path.display()))?;
    let data = load_dataset(&args.dataset, args.seed.unwrap_or(0))?;
    let gold: Vec<Example> = data
        .split
        .train
        .iter()
        .chain(&data.split.dev)
        .chain(&data.split.test)
        .cloned()
        .collect();
    let score = score_traces(&traces, &gold)?;
    let report = Report {
        backend: backend_mode(&dir),
        summary: &score.summary,
        duplicates: score.duplicates,
        failed: score.failed,
        records: &score.records,
    };
    let out = args.out.clone().unwrap_or_else(|| dir.join(REPORT_FILE));
    let out_dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    create_dir(&out_dir)?;
    write_json(&out, &report)?;
    // a report written away from its run gets its own manifest
    if !out_dir.join(MANIFEST_FILE).exists() {
        write_json(
            &out_dir.join(MANIFEST_FILE),
            &EvalManifest {
                command: "eval",
                version: env!("CARGO_PKG_VERSION"),
                traces: &traces_path,
                dataset: &args.dataset,
                seed: args.seed.unwrap_or(0),
                report: &out,
                finished_unix: unix_now(),
            },
        )?;
    }
    print!("{}", score.summary.table());
    println!(
        "n = {}, backend = {}, duplicates = {}, failed = {}",
        score.summary.n, report.backend, score.duplicates, score.failed
    );
    Ok(Outcome(if score.failed == 0 { EXIT_OK } else { EXIT_FAILURES }))
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    let _ = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    let result = match &cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(Outcome(code)) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INPUT
        }
    }
}
