//! `tripletrag`: build triplet indices, answer questions, run evaluations.
//!
//! Exit status: 0 on success, 1 on a runtime failure, 2 on bad usage or
//! unreadable input.

use std::fs::File;
use std::io::{self, BufWriter, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use tripletrag::eval::load_dataset;
use tripletrag::index::{build_index, load_index, save_index, BuildOptions};
use tripletrag::llm::{Gateway, HashEmbedder, LiveBackend, LiveConfig, MockBackend};
use tripletrag::resolve::{write_trace, QueryEngine, TraceEvent};
use tripletrag::{load_corpus, run_eval, BackendConfig, RunConfig, TripletIndex};

#[derive(Parser)]
#[command(name = "tripletrag", version, about = "Triplet-index retrieval and iterative multi-hop question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract triplets from a corpus and write an index directory.
    Index {
        /// JSONL documents ({"doc_id","title","text"}) or chunks ({"chunk_id","doc_id","text"}).
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Answer one question; the answer is the last line of standard output.
    Query {
        #[arg(long)]
        index: PathBuf,
        question: String,
        /// Write the trace as JSON lines to PATH, or to standard error without one.
        #[arg(long, value_name = "PATH", num_args = 0..=1)]
        trace: Option<Option<PathBuf>>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Answer every question of a dataset and score the answers.
    Eval {
        #[arg(long)]
        index: PathBuf,
        /// JSONL rows {"id","question","answers":[...]}.
        #[arg(long)]
        dataset: PathBuf,
        /// JSON report path.
        #[arg(long, default_value = "report.json")]
        report: PathBuf,
        /// Optional CSV of per-example rows.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Exit 1 when more than this fraction of examples fail.
        #[arg(long, default_value_t = 0.5)]
        max_error_rate: f64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print an index's metadata and, optionally, some propositions.
    Inspect {
        #[arg(long)]
        index: PathBuf,
        /// Number of propositions to list.
        #[arg(long, default_value_t = 0)]
        props: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Live,
    Mock,
}

#[derive(Args)]
struct RunArgs {
    /// Unique source chunks to cover per round.
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    max_rounds: u32,
    /// Chunk length in tokens.
    #[arg(long, default_value_t = 1200)]
    chunk_size: usize,
    #[arg(long, default_value_t = 100)]
    overlap: usize,
    /// Initial per-query candidate pool is pool-mult x k.
    #[arg(long, default_value_t = 8)]
    pool_mult: usize,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Skip chunks already retrieved in earlier rounds of the same query.
    #[arg(long)]
    dedup_rounds: bool,
    /// Substitute learned bindings into fuzzy triplets without a model call.
    #[arg(long)]
    propagate_bindings: bool,
    /// Do not prepend document titles to chunk text.
    #[arg(long)]
    no_title: bool,
    /// Per-chunk character cap in the resolving prompt.
    #[arg(long)]
    chunk_char_budget: Option<usize>,
    #[arg(long, value_enum, default_value = "live")]
    backend: BackendKind,
    /// Scripted replies for the mock backend.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Mock embedding dimension.
    #[arg(long, default_value_t = HashEmbedder::DEFAULT_DIM)]
    embedding_dim: usize,
    /// Mock backend answers unmatched prompts with empty text instead of failing.
    #[arg(long)]
    lax: bool,
    /// Base URL of an OpenAI-compatible API.
    #[arg(long, default_value = LiveConfig::DEFAULT_BASE_URL)]
    endpoint: String,
    #[arg(long, default_value = LiveConfig::DEFAULT_MODEL)]
    model: String,
    #[arg(long, default_value = LiveConfig::DEFAULT_EMBEDDING_MODEL)]
    embedding_model: String,
    /// Name of the environment variable holding the API key.
    #[arg(long, default_value = LiveConfig::DEFAULT_KEY_VAR)]
    api_key_env: String,
    /// HTTP timeout per request, in seconds.
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
}

/// An error with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CmdResult<T = ()> = Result<T, Failure>;

trait Classify<T> {
    fn usage(self) -> CmdResult<T>;
    fn runtime(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> CmdResult<T> {
        self.map_err(|e| Failure { code: 2, error: e.into() })
    }

    fn runtime(self) -> CmdResult<T> {
        self.map_err(|e| Failure { code: 1, error: e.into() })
    }
}

impl RunArgs {
    fn config(&self) -> CmdResult<RunConfig> {
        let backend = match self.backend {
            BackendKind::Mock => BackendConfig::Mock {
                transcript: self.transcript.clone(),
                embedding_dim: self.embedding_dim,
                strict: !self.lax,
            },
            BackendKind::Live => BackendConfig::Live {
                endpoint: self.endpoint.clone(),
                model: self.model.clone(),
                embedding_model: self.embedding_model.clone(),
                api_key_env: self.api_key_env.clone(),
            },
        };
        let config = RunConfig {
            k: self.k,
            max_rounds: self.max_rounds,
            chunk_size: self.chunk_size,
            overlap: self.overlap,
            pool_mult: self.pool_mult,
            workers: self.workers,
            dedup_rounds: self.dedup_rounds,
            propagate_bindings: self.propagate_bindings,
            prepend_title: !self.no_title,
            chunk_char_budget: self.chunk_char_budget,
            backend,
        };
        config.validate().usage()?;
        Ok(config)
    }

    fn gateway(&self) -> CmdResult<Gateway> {
        match self.backend {
            BackendKind::Mock => {
                let path = self
                    .transcript
                    .as_deref()
                    .ok_or_else(|| anyhow!("--backend mock needs --transcript PATH"))
                    .usage()?;
                require_file(path)?;
                let backend = MockBackend::load(path, !self.lax)
                    .with_context(|| format!("loading transcript {}", path.display()))
                    .usage()?;
                if self.embedding_dim == 0 {
                    return Err(anyhow!("--embedding-dim must be at least 1")).usage();
                }
                Ok(Gateway::new(Arc::new(backend), Arc::new(HashEmbedder::new(self.embedding_dim))))
            }
            BackendKind::Live => {
                let mut live = LiveConfig::from_env(&self.api_key_env);
                live.base_url = self.endpoint.clone();
                live.model = self.model.clone();
                live.embedding_model = self.embedding_model.clone();
                live.timeout = Duration::from_secs(self.timeout_secs);
                if live.api_key.is_none() {
                    tracing::warn!(var = %self.api_key_env, "no API key in the environment; sending requests without one");
                }
                let backend = Arc::new(LiveBackend::new(live).usage()?);
                Ok(Gateway::new(backend.clone(), backend))
            }
        }
    }
}

fn require_file(path: &Path) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(anyhow!("{}: no such file", path.display())).usage()
    }
}

fn open_index(dir: &Path) -> CmdResult<TripletIndex> {
    if !dir.is_dir() {
        return Err(anyhow!("{}: no such index directory", dir.display())).usage();
    }
    load_index(dir)
        .with_context(|| format!("loading index {}", dir.display()))
        .usage()
}

/// Query vectors must come from the embedder the index was built with.
fn check_embedder(index: &TripletIndex, gateway: &Gateway) -> CmdResult {
    let built = &index.meta().embedder_id;
    let now = gateway.embedder_id();
    if *built != now {
        return Err(anyhow!(
            "index was embedded with `{built}` but this run uses `{now}`; pass matching embedding flags"
        ))
        .usage();
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(io::stderr)
        .with_ansi(io::stderr().is_terminal())
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Index { corpus, out, run } => cmd_index(&corpus, &out, &run),
        Command::Query { index, question, trace, run } => cmd_query(&index, &question, trace, &run),
        Command::Eval { index, dataset, report, csv, max_error_rate, run } => {
            cmd_eval(&index, &dataset, &report, csv.as_deref(), max_error_rate, &run)
        }
        Command::Inspect { index, props } => cmd_inspect(&index, props),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", render_chain(&f.error));
            ExitCode::from(f.code)
        }
    }
}

/// Joins the cause chain, skipping causes a previous message already spells out.
fn render_chain(error: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in error.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn cmd_index(corpus_path: &Path, out: &Path, run: &RunArgs) -> CmdResult {
    let config = run.config()?;
    require_file(corpus_path)?;
    let corpus = load_corpus(corpus_path).usage()?;
    let gateway = run.gateway()?;
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .usage()?;
    let checkpoint = out.join(".checkpoint");
    let opts = BuildOptions {
        checkpoint_dir: Some(checkpoint.clone()),
        ..BuildOptions::default()
    };
    let (index, stats) = build_index(corpus, &gateway, &config, &opts)
        .context("index build failed; rerun the same command to resume")
        .runtime()?;
    save_index(&index, out)
        .with_context(|| format!("writing index to {}", out.display()))
        .runtime()?;
    if let Err(e) = std::fs::remove_dir_all(&checkpoint) {
        tracing::warn!(error = %e, "could not remove the build checkpoint");
    }

    if stats.resumed_chunks > 0 {
        println!("resumed {} chunk(s) from checkpoint", stats.resumed_chunks);
    }
    println!("documents           {}", stats.documents);
    println!("chunks              {}", stats.chunks);
    println!("tokens              {}", stats.tokens);
    println!("extracted triplets  {}", stats.extracted_triplets);
    println!("dropped lines       {}", stats.dropped_lines);
    println!(
        "build tokens        {} in / {} out (weighted {})",
        stats.usage.input_tokens, stats.usage.output_tokens, stats.weighted_cost
    );
    println!("{} propositions, {} chunks", index.len(), index.chunks().len());
    Ok(())
}

/// Trace lines: the resolved config first, then the query's events.
fn emit_trace(target: &Option<PathBuf>, config: &RunConfig, events: &[TraceEvent]) -> CmdResult {
    let mut sink: Box<dyn Write> = match target {
        Some(path) => Box::new(BufWriter::new(
            File::create(path)
                .with_context(|| format!("creating trace file {}", path.display()))
                .runtime()?,
        )),
        None => Box::new(io::stderr().lock()),
    };
    let config = serde_json::to_string(config).runtime()?;
    writeln!(sink, "{{\"event\":\"config\",\"config\":{config}}}").runtime()?;
    write_trace(events, &mut sink).runtime()?;
    sink.flush().runtime()
}

fn cmd_query(index_dir: &Path, question: &str, trace: Option<Option<PathBuf>>, run: &RunArgs) -> CmdResult {
    let config = run.config()?;
    if question.trim().is_empty() {
        return Err(anyhow!("question is empty")).usage();
    }
    let index = open_index(index_dir)?;
    let gateway = run.gateway()?;
    check_embedder(&index, &gateway)?;
    let engine = QueryEngine::new(&gateway, &index, &config);
    match engine.run_query(question) {
        Ok(result) => {
            if let Some(target) = &trace {
                emit_trace(target, &config, &result.trace)?;
            }
            let usage = result.usage.total();
            eprintln!(
                "rounds {}, fully resolved {}, tokens {} in / {} out (weighted {})",
                result.rounds_used,
                result.fully_resolved,
                usage.input_tokens,
                usage.output_tokens,
                usage.weighted_cost()
            );
            println!("{}", result.answer);
            Ok(())
        }
        Err(failure) => {
            if let Some(target) = &trace {
                emit_trace(target, &config, &failure.trace)?;
            }
            Err(anyhow::Error::new(failure).context("query failed")).runtime()
        }
    }
}

fn cmd_eval(
    index_dir: &Path,
    dataset_path: &Path,
    report_path: &Path,
    csv_path: Option<&Path>,
    max_error_rate: f64,
    run: &RunArgs,
) -> CmdResult {
    let config = run.config()?;
    if !(0.0..=1.0).contains(&max_error_rate) {
        return Err(anyhow!("--max-error-rate must be within [0, 1]")).usage();
    }
    require_file(dataset_path)?;
    let dataset = load_dataset(dataset_path).usage()?;
    let index = open_index(index_dir)?;
    let gateway = run.gateway()?;
    check_embedder(&index, &gateway)?;
    let engine = QueryEngine::new(&gateway, &index, &config);
    let report = run_eval(&dataset, &engine).usage()?;

    let json = serde_json::to_string_pretty(&report).runtime()?;
    std::fs::write(report_path, json)
        .with_context(|| format!("writing {}", report_path.display()))
        .runtime()?;
    if let Some(path) = csv_path {
        report.write_csv(path).runtime()?;
    }
    print!("{}", report.to_text());
    println!("{}", report.headline());
    let rate = report.error_rate();
    if rate > max_error_rate {
        return Err(anyhow!(
            "{} of {} examples failed ({:.0}%), above the {:.0}% threshold",
            report.overall.errors,
            report.rows.len(),
            rate * 100.0,
            max_error_rate * 100.0
        ))
        .runtime();
    }
    Ok(())
}

fn cmd_inspect(index_dir: &Path, props: usize) -> CmdResult {
    let index = open_index(index_dir)?;
    let meta = serde_json::to_string_pretty(index.meta()).runtime()?;
    println!("{meta}");
    for p in index.propositions().iter().take(props) {
        println!("{}\t{}\t{}", p.prop_id, p.chunk_id, p.text);
    }
    println!("{} propositions, {} chunks", index.len(), index.chunks().len());
    Ok(())
}
