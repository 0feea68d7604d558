use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use forge::bench::{run_benchmark, write_outputs, BenchmarkConfig};
use forge::client::{ChatClient, EndpointConfig};
use forge::server::{self, ServerOptions};
use forge::synth::{synthesize_batch, SourceText, SynthesisOptions};
use forge_core::annotation::{
    extract_entities, parse_annotated_text, parse_pos_line, validate_record, AnnotatedDocument, AnnotatedRecord,
    EntityLabel, Tagset,
};
use forge_core::bench::{emit_training_config, render_report, BenchmarkResult, ReportFormat, TrainingOverrides};
use forge_core::corpus::{
    compute_stats, deduplicate, ingest_documents, read_corpus, render_stats, write_corpus, IngestFormat,
    SourceCategory, StatsFormat,
};
use forge_core::instruct::{
    export_dataset, make_eval_split, read_samples, write_samples, InstructionFrames, PromptTemplate, ReviewState,
    TaskKind,
};
use forge_core::metrics::{evaluate_corpus, score_pair, TokenMode};
use forge_core::review::ReviewService;

#[derive(Parser)]
#[command(
    name = "forge",
    version,
    about = "Corpus, instruction-data, benchmark and review tooling for ICH text"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest, deduplicate and describe raw text corpora
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Parse and check entity/POS annotations
    #[command(subcommand)]
    Annotate(AnnotateCmd),
    /// Score candidate texts against references
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Build, synthesize, export and split instruction data
    #[command(subcommand)]
    Instruct(InstructCmd),
    /// Run model benchmarks and emit trainer configuration
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Human review service
    #[command(subcommand)]
    Review(ReviewCmd),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Read raw files below a directory into a cleaned corpus JSONL
    Ingest {
        #[arg(long)]
        root: PathBuf,
        /// PoliciesRegulations, NewsThematicReports, AcademicResources, ProjectInventory or JournalAbstracts
        #[arg(long)]
        category: SourceCategory,
        #[arg(long, default_value = "plain")]
        format: IngestFormat,
        #[arg(long)]
        out: PathBuf,
        /// Also write the ingest report (skipped records etc.) as JSON
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Per-category token statistics
    Stats {
        corpus: PathBuf,
        #[arg(long, default_value = "table")]
        format: StatsFormat,
    },
    /// Drop exact-duplicate texts, keeping first occurrences
    Dedup {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AnnotateCmd {
    /// Convert inline markup (one document per line) to annotated JSONL
    Parse {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional `word/tag` lines aligned with the markup lines
        #[arg(long)]
        pos: Option<PathBuf>,
        #[arg(long)]
        tagset: Option<PathBuf>,
    },
    /// Report invariant violations; exits 1 if any are found
    Validate {
        annotated: PathBuf,
        #[arg(long)]
        tagset: Option<PathBuf>,
    },
    /// Print entity surfaces as `doc_id<TAB>label<TAB>surface`
    Entities {
        annotated: PathBuf,
        #[arg(long)]
        label: Option<EntityLabel>,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Score one candidate file against one reference file
    Pair {
        #[arg(long)]
        cand: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value = "char")]
        mode: TokenMode,
    },
    /// Mean scores over a JSONL file of {"candidate", "reference"} lines
    Corpus {
        pairs: PathBuf,
        #[arg(long, default_value = "char")]
        mode: TokenMode,
    },
}

#[derive(Args)]
struct EndpointArgs {
    /// Defaults to FORGE_API_BASE
    #[arg(long, env = "FORGE_API_BASE")]
    base_url: Option<String>,
    /// Defaults to FORGE_MODEL
    #[arg(long, env = "FORGE_MODEL")]
    model: Option<String>,
    #[arg(long, default_value_t = 60)]
    timeout_seconds: u64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
}

impl EndpointArgs {
    fn endpoint(&self) -> Result<EndpointConfig> {
        let base = self
            .base_url
            .clone()
            .context("no endpoint: pass --base-url or set FORGE_API_BASE")?;
        let model = self
            .model
            .clone()
            .context("no model: pass --model or set FORGE_MODEL")?;
        let mut cfg = EndpointConfig::new(base, model).with_env_defaults();
        cfg.timeout_seconds = self.timeout_seconds;
        cfg.max_retries = self.max_retries;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum InstructCmd {
    /// Generate Pending QA samples from source texts with a chat model
    Synth {
        /// JSONL with `text` and `doc_id` (or `id`) per line
        #[arg(long)]
        corpus: PathBuf,
        /// Prompt template containing `{source_text}`; defaults to the built-in QA prompt
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        max_pairs: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "KnowledgeQA")]
        task: TaskKind,
        #[arg(long, default_value_t = forge::client::DEFAULT_MAX_IN_FLIGHT)]
        concurrency: usize,
        /// Where to write rejected-generation diagnostics (JSONL)
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        #[command(flatten)]
        endpoint: EndpointArgs,
    },
    /// Write reviewed samples as training JSONL
    Export {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "accepted,edited")]
        states: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded eval split of reviewed samples for one task
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        seed: u64,
        /// Defaults to stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Query every endpoint on every eval set and score the replies
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `output_dir` from the config
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a stored run
    Render {
        run: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
    },
    /// Write train.cfg and train.json with optional overrides
    TrainConfig {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        max_epochs: Option<i64>,
        #[arg(long)]
        finetuning_type: Option<String>,
        #[arg(long, allow_negative_numbers = true)]
        batch_size: Option<i64>,
        #[arg(long, allow_negative_numbers = true)]
        max_sequence_length: Option<i64>,
    },
}

#[derive(Subcommand)]
enum ReviewCmd {
    /// Serve the review API (and optionally static UI assets)
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 8787)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Corpus JSONL used to show source snippets next to samples
        #[arg(long)]
        sources: Option<PathBuf>,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("FORGE_LOG").unwrap_or_else(|_| "warn,forge=info".into()),
        )
        .with_writer(io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Corpus(cmd) => corpus(cmd),
        Command::Annotate(cmd) => annotate(cmd),
        Command::Eval(cmd) => eval(cmd),
        Command::Instruct(cmd) => instruct(cmd),
        Command::Bench(cmd) => bench(cmd),
        Command::Review(cmd) => review(cmd),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn corpus(cmd: CorpusCmd) -> Result<ExitCode> {
    match cmd {
        CorpusCmd::Ingest {
            root,
            category,
            format,
            out,
            report,
        } => {
            let (records, rep) = ingest_documents(&root, category, format)?;
            let docs: Vec<_> = records.into_iter().filter_map(|r| r.clean()).collect();
            write_corpus(&out, &docs)?;
            eprintln!(
                "{} files, {} records, {} documents written, {} skipped",
                rep.files,
                rep.records,
                docs.len(),
                rep.skipped.len()
            );
            for d in &rep.skipped {
                eprintln!("skipped {}:{}: {}", d.source_path, d.line, d.message);
            }
            if let Some(path) = report {
                write_json(&path, &rep)?;
            }
        }
        CorpusCmd::Stats { corpus, format } => {
            let docs = read_corpus(&corpus)?;
            print!("{}", render_stats(&compute_stats(&docs), format)?);
        }
        CorpusCmd::Dedup { input, out, report } => {
            let (kept, rep) = deduplicate(read_corpus(&input)?);
            write_corpus(&out, &kept)?;
            eprintln!("{} kept, {} removed", kept.len(), rep.removed.len());
            if let Some(path) = report {
                write_json(&path, &rep)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_tagset(path: Option<&Path>) -> Result<Tagset> {
    Ok(match path {
        Some(p) => Tagset::load(p)?,
        None => Tagset::default(),
    })
}

fn read_records(path: &Path) -> Result<Vec<AnnotatedRecord>> {
    Ok(forge_core::jsonl::read(path)?)
}

fn annotate(cmd: AnnotateCmd) -> Result<ExitCode> {
    match cmd {
        AnnotateCmd::Parse {
            input,
            out,
            pos,
            tagset,
        } => {
            let tagset = load_tagset(tagset.as_deref())?;
            let markup = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let pos_lines: Option<Vec<String>> = match &pos {
                Some(p) => Some(
                    fs::read_to_string(p)
                        .with_context(|| format!("reading {}", p.display()))?
                        .lines()
                        .map(str::to_string)
                        .collect(),
                ),
                None => None,
            };
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("doc");
            let mut records = Vec::new();
            for (i, line) in markup.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let lineno = i + 1;
                let mut doc: AnnotatedDocument =
                    parse_annotated_text(line).with_context(|| format!("{}:{lineno}", input.display()))?;
                doc.doc_id = format!("{stem}:{lineno}");
                if let Some(lines) = &pos_lines {
                    let pos_line = lines.get(i).with_context(|| format!("POS file has no line {lineno}"))?;
                    doc.pos_tokens =
                        Some(parse_pos_line(pos_line, &tagset).with_context(|| format!("POS line {lineno}"))?);
                }
                records.push(AnnotatedRecord::from(&doc));
            }
            forge_core::jsonl::write(&out, &records)?;
            eprintln!("{} documents written", records.len());
            Ok(ExitCode::SUCCESS)
        }
        AnnotateCmd::Validate { annotated, tagset } => {
            let tagset = load_tagset(tagset.as_deref())?;
            let mut stdout = io::stdout().lock();
            let mut bad = 0;
            let records = read_records(&annotated)?;
            for rec in &records {
                let violations = validate_record(rec, &tagset);
                if !violations.is_empty() {
                    bad += 1;
                }
                for v in violations {
                    writeln!(
                        stdout,
                        "{}\t{}\t{}",
                        rec.doc_id,
                        serde_json::to_value(v.kind)?.as_str().unwrap_or(""),
                        v.message
                    )?;
                }
            }
            eprintln!("{} documents, {} with violations", records.len(), bad);
            Ok(if bad == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        AnnotateCmd::Entities { annotated, label } => {
            let mut stdout = io::stdout().lock();
            for rec in read_records(&annotated)? {
                let doc = AnnotatedDocument::try_from(rec)?;
                for (surface, l) in extract_entities(&doc, label) {
                    writeln!(stdout, "{}\t{}\t{}", doc.doc_id, l, surface)?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[derive(Deserialize)]
struct PairLine {
    candidate: String,
    reference: String,
}

fn eval(cmd: EvalCmd) -> Result<ExitCode> {
    let report = match cmd {
        EvalCmd::Pair { cand, reference, mode } => {
            let c = fs::read_to_string(&cand).with_context(|| format!("reading {}", cand.display()))?;
            let r = fs::read_to_string(&reference).with_context(|| format!("reading {}", reference.display()))?;
            score_pair(c.trim_end_matches(['\r', '\n']), r.trim_end_matches(['\r', '\n']), mode)
        }
        EvalCmd::Corpus { pairs, mode } => {
            let lines: Vec<PairLine> = forge_core::jsonl::read(&pairs)?;
            let pairs: Vec<(&str, &str)> = lines
                .iter()
                .map(|p| (p.candidate.as_str(), p.reference.as_str()))
                .collect();
            evaluate_corpus(&pairs, mode)?
        }
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

#[derive(Deserialize)]
struct SourceLine {
    #[serde(alias = "id")]
    doc_id: Option<String>,
    text: String,
}

fn instruct(cmd: InstructCmd) -> Result<ExitCode> {
    match cmd {
        InstructCmd::Synth {
            corpus,
            template,
            max_pairs,
            out,
            task,
            concurrency,
            diagnostics,
            endpoint,
        } => {
            let endpoint = endpoint.endpoint()?;
            let template = match template {
                Some(p) => PromptTemplate::load(&p)?,
                None => PromptTemplate::default_qa(),
            };
            let sources: Vec<SourceText> = forge_core::jsonl::read::<SourceLine>(&corpus)?
                .into_iter()
                .map(|l| SourceText {
                    doc_id: l.doc_id,
                    text: l.text,
                })
                .collect();
            let opts = SynthesisOptions {
                template,
                task,
                frames: InstructionFrames::chinese(),
                max_pairs,
                concurrency,
            };
            let client = ChatClient::new(concurrency);
            let output = runtime()?.block_on(synthesize_batch(&client, &endpoint, &sources, &opts));
            write_samples(&out, &output.samples)?;
            for d in &output.diagnostics {
                eprintln!(
                    "rejected generation for {} ({}): {}",
                    d.source_doc_id.as_deref().unwrap_or("-"),
                    d.request_id.as_deref().unwrap_or("-"),
                    d.message
                );
            }
            if let Some(path) = diagnostics {
                forge_core::jsonl::write(&path, &output.diagnostics)?;
            }
            eprintln!(
                "{} sources, {} pending samples, {} diagnostics",
                sources.len(),
                output.samples.len(),
                output.diagnostics.len()
            );
        }
        InstructCmd::Export { input, states, out } => {
            let include = ReviewState::parse_set(&states)?;
            let n = export_dataset(&read_samples(&input)?, &include, &out)?;
            eprintln!("{n} samples exported");
        }
        InstructCmd::Split {
            input,
            task,
            size,
            seed,
            out,
        } => {
            let split = make_eval_split(&read_samples(&input)?, task, size, seed)?;
            match out {
                Some(path) => write_samples(&path, &split)?,
                None => print!("{}", forge_core::jsonl::to_string(&split)?),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn bench(cmd: BenchCmd) -> Result<ExitCode> {
    match cmd {
        BenchCmd::Run { config, out } => {
            let cfg = BenchmarkConfig::load(&config)?;
            let Some(dir) = out.or_else(|| cfg.output_dir.clone()) else {
                bail!("no output directory: pass --out or set output_dir in the config");
            };
            let client = ChatClient::new(cfg.concurrency);
            let result = runtime()?.block_on(run_benchmark(&client, &cfg))?;
            for path in write_outputs(&result, &dir)? {
                eprintln!("wrote {}", path.display());
            }
            for s in &result.skipped {
                eprintln!("skipped {}: {}", s.model, s.reason);
            }
        }
        BenchCmd::Render { run, format } => {
            let result = BenchmarkResult::load(&run)?;
            print!("{}", render_report(&result, format)?);
        }
        BenchCmd::TrainConfig {
            out,
            learning_rate,
            max_epochs,
            finetuning_type,
            batch_size,
            max_sequence_length,
        } => {
            let overrides = TrainingOverrides {
                learning_rate,
                max_epochs,
                finetuning_type,
                batch_size,
                max_sequence_length,
            };
            let (cfg, json) = emit_training_config(&overrides, &out)?;
            eprintln!("wrote {} and {}", cfg.display(), json.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn review(cmd: ReviewCmd) -> Result<ExitCode> {
    let ReviewCmd::Serve {
        store,
        log,
        port,
        host,
        sources,
        ui_dir,
    } = cmd;
    let samples = read_samples(&store)?;
    let mut service = ReviewService::open(samples, &log)?;
    if let Some(path) = sources {
        let texts: HashMap<String, String> = read_corpus(&path)?.into_iter().map(|d| (d.id, d.text)).collect();
        service = service.with_sources(texts);
    }
    let stats = service.stats();
    eprintln!(
        "{} samples: {} pending, {} accepted, {} edited, {} rejected",
        stats.total(),
        stats.pending,
        stats.accepted,
        stats.edited,
        stats.rejected
    );
    let token = std::env::var(server::TOKEN_ENV).ok().filter(|t| !t.is_empty());
    if token.is_none() {
        tracing::warn!(
            "{} is not set; the API accepts unauthenticated requests",
            server::TOKEN_ENV
        );
    }
    let app = server::router(Arc::new(service), ServerOptions { token, ui_dir });
    runtime()?.block_on(server::serve(SocketAddr::new(host, port), app))?;
    Ok(ExitCode::SUCCESS)
}
