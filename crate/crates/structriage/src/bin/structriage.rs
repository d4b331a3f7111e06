//! Command-line entry point: ingestion, ad-hoc questions, batch
//! evaluation, and report aggregation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use structriage::doc_model::{build_index, DocumentIndex, StructureNode};
use structriage::eval::{self, GptScore};
use structriage::ingest;
use structriage::llm::{AssistantAction, Provider, RemoteProvider, ScriptedProvider};
use structriage::orchestrator::{SessionConfig, Strategy};
use structriage::retrieval::{EmbeddingProvider, LocalHashEmbedder, RemoteEmbedder};

const ENV_LLM_KEY: &str = "STRUCTRIAGE_LLM_KEY";
const ENV_EMBED_KEY: &str = "STRUCTRIAGE_EMBED_KEY";
const ENV_EXTRACT_URL: &str = "STRUCTRIAGE_EXTRACT_URL";

#[derive(Parser)]
#[command(name = "structriage", version, about = "Structure-aware document question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ProviderArgs {
    /// `scripted:<path>` for a deterministic action script, or `remote`
    #[arg(long, default_value = "remote")]
    provider: String,
    /// Chat-completions endpoint for the remote provider
    #[arg(long)]
    llm_endpoint: Option<String>,
    /// Embeddings endpoint; omitted means the local deterministic embedder
    #[arg(long)]
    embed_endpoint: Option<String>,
    #[arg(long, default_value = "gpt-35-turbo-0613")]
    model: String,
    /// Token budget for retrieval (both the retrieve function and baselines)
    #[arg(long, default_value_t = 3000)]
    budget: usize,
    #[arg(long, default_value_t = 8)]
    max_turns: u32,
}

impl ProviderArgs {
    fn session_config(&self) -> SessionConfig {
        SessionConfig {
            max_turns: self.max_turns,
            retrieve_budget: self.budget,
            baseline_context_budget: self.budget,
            model_id: self.model.clone(),
        }
    }

    fn llm_provider(&self) -> Result<Box<dyn Provider>, String> {
        if let Some(path) = self.provider.strip_prefix("scripted:") {
            let raw = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read script `{path}`: {e}"))?;
            let script: Vec<AssistantAction> =
                serde_json::from_str(&raw).map_err(|e| format!("bad script `{path}`: {e}"))?;
            return Ok(Box::new(
                ScriptedProvider::new(script).map_err(|e| e.to_string())?,
            ));
        }
        if self.provider != "remote" {
            return Err(format!(
                "unknown provider `{}` (use remote or scripted:<path>)",
                self.provider
            ));
        }
        let endpoint = self
            .llm_endpoint
            .clone()
            .ok_or("remote provider needs --llm-endpoint")?;
        let key = std::env::var(ENV_LLM_KEY).ok();
        Ok(Box::new(RemoteProvider::new(endpoint, self.model.clone(), key)))
    }

    fn embedder(&self) -> Box<dyn EmbeddingProvider> {
        match &self.embed_endpoint {
            Some(endpoint) => Box::new(RemoteEmbedder::new(
                endpoint.clone(),
                "text-embedding-ada-002",
                std::env::var(ENV_EMBED_KEY).ok(),
            )),
            None => Box::new(LocalHashEmbedder),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Convert a document into the canonical structure-tree JSON
    Ingest {
        input: PathBuf,
        /// interchange | html
        #[arg(long)]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extraction service URL (overrides STRUCTRIAGE_EXTRACT_URL)
        #[arg(long)]
        extract_endpoint: Option<String>,
    },
    /// Answer one question over an ingested document
    Ask {
        doc: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long, default_value = "pdftriage")]
        strategy: Strategy,
        /// Print the full QARecord JSON instead of just the answer
        #[arg(long)]
        trace: bool,
        /// Read questions interactively after answering --question
        #[arg(long)]
        repl: bool,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Run a dataset of questions against a corpus of ingested documents
    Eval {
        corpus: PathBuf,
        dataset: PathBuf,
        /// Comma-separated list: pdftriage,page,chunk
        #[arg(long, default_value = "pdftriage,page,chunk", value_delimiter = ',')]
        strategies: Vec<Strategy>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Aggregate a run file into a report
    Report {
        run: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Dataset JSONL, needed for category and difficulty breakdowns
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// JSONL of {"question_id","strategy","score"} judge scores
        #[arg(long)]
        gpt_scores: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn load_tree(path: &Path) -> Result<DocumentIndex, String> {
    let raw = std::fs::read_to_string(path).map_err(|e| format!("cannot read `{}`: {e}", path.display()))?;
    let tree: StructureNode =
        serde_json::from_str(&raw).map_err(|e| format!("bad tree `{}`: {e}", path.display()))?;
    build_index(tree).map_err(|e| format!("invalid tree `{}`: {e}", path.display()))
}

fn cmd_ingest(
    input: &Path,
    format: &str,
    out: Option<&Path>,
    extract_endpoint: Option<String>,
) -> Result<(), CliError> {
    let tree = match format {
        "interchange" => {
            let raw = std::fs::read(input)
                .map_err(|e| CliError::runtime(format!("cannot read `{}`: {e}", input.display())))?;
            ingest::parse_interchange(&raw).map_err(CliError::runtime)?
        }
        "html" => {
            let raw = std::fs::read_to_string(input)
                .map_err(|e| CliError::runtime(format!("cannot read `{}`: {e}", input.display())))?;
            ingest::parse_html_lite(&raw).map_err(CliError::runtime)?
        }
        "pdf" => {
            let endpoint = extract_endpoint.or_else(|| std::env::var(ENV_EXTRACT_URL).ok());
            match endpoint {
                None => {
                    return Err(CliError::usage(
                        "unsupported format; use an extraction service (--extract-endpoint)",
                    ));
                }
                Some(endpoint) => {
                    let raw = std::fs::read(input).map_err(|e| {
                        CliError::runtime(format!("cannot read `{}`: {e}", input.display()))
                    })?;
                    let doc = ingest::fetch_extraction(&endpoint, &raw).map_err(CliError::runtime)?;
                    ingest::interchange_to_tree(&doc).map_err(CliError::runtime)?
                }
            }
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown format `{other}` (use interchange|html|pdf)"
            )));
        }
    };
    let index = build_index(tree.clone()).map_err(CliError::runtime)?;
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| input.with_extension("tree.json"));
    let json = serde_json::to_string_pretty(&tree).expect("tree serializes");
    std::fs::write(&out_path, json)
        .map_err(|e| CliError::runtime(format!("cannot write `{}`: {e}", out_path.display())))?;
    let sections = index.section_ids().count();
    let tables = index.table_ids().count();
    let figures = index.figure_ids().count();
    println!(
        "{} section{}, {} table{}, {} figure{}, {} page{} -> {}",
        sections,
        plural(sections),
        tables,
        plural(tables),
        figures,
        plural(figures),
        index.page_count(),
        plural(index.page_count() as usize),
        out_path.display()
    );
    Ok(())
}

fn plural(n: usize) -> &'static str {
    if n == 1 { "" } else { "s" }
}

fn cmd_ask(
    doc: &Path,
    question: &str,
    strategy: Strategy,
    trace: bool,
    repl: bool,
    args: &ProviderArgs,
) -> Result<(), CliError> {
    let index = load_tree(doc).map_err(CliError::runtime)?;
    let provider = args.llm_provider().map_err(CliError::usage)?;
    let embedder = args.embedder();
    let config = args.session_config();
    let ask_once = |q: &str| -> Result<(), CliError> {
        let record =
            structriage::orchestrator::answer(strategy, &index, q, provider.as_ref(), embedder.as_ref(), &config)
                .map_err(CliError::runtime)?;
        if trace {
            println!("{}", serde_json::to_string_pretty(&record).expect("record serializes"));
        } else {
            println!("{}", record.answer);
        }
        Ok(())
    };
    ask_once(question)?;
    if repl {
        let stdin = std::io::stdin();
        let mut line = String::new();
        loop {
            line.clear();
            if stdin.read_line(&mut line).map_err(|e| CliError::runtime(e.to_string()))? == 0 {
                break;
            }
            let q = line.trim();
            if q.is_empty() || q == "exit" {
                break;
            }
            ask_once(q)?;
        }
    }
    Ok(())
}

fn load_corpus(dir: &Path) -> Result<BTreeMap<String, DocumentIndex>, String> {
    let mut corpus = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| format!("cannot read `{}`: {e}", dir.display()))?;
    for entry in entries {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().is_some_and(|ext| ext == "json") {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or("bad corpus filename")?
                .to_string();
            corpus.insert(stem, load_tree(&path)?);
        }
    }
    if corpus.is_empty() {
        return Err(format!("no .json documents in `{}`", dir.display()));
    }
    Ok(corpus)
}

fn cmd_eval(
    corpus_dir: &Path,
    dataset_path: &Path,
    strategies: &[Strategy],
    out: &Path,
    workers: usize,
    args: &ProviderArgs,
) -> Result<(), CliError> {
    let corpus = load_corpus(corpus_dir).map_err(CliError::runtime)?;
    let dataset = eval::load_dataset(dataset_path).map_err(CliError::runtime)?;
    let provider = args.llm_provider().map_err(CliError::usage)?;
    let embedder = args.embedder();
    let records = eval::run_eval(
        &corpus,
        &dataset,
        strategies,
        provider.as_ref(),
        embedder.as_ref(),
        &args.session_config(),
        workers,
    )
    .map_err(CliError::runtime)?;
    std::fs::write(out, eval::records_to_jsonl(&records))
        .map_err(|e| CliError::runtime(format!("cannot write `{}`: {e}", out.display())))?;
    println!("{} records -> {}", records.len(), out.display());
    Ok(())
}

fn cmd_report(
    run: &Path,
    annotations: Option<&Path>,
    dataset: Option<&Path>,
    gpt_scores: Option<&Path>,
    out: Option<&Path>,
    csv_out: Option<&Path>,
) -> Result<(), CliError> {
    let raw = std::fs::read_to_string(run)
        .map_err(|e| CliError::runtime(format!("cannot read `{}`: {e}", run.display())))?;
    let records = eval::records_from_jsonl(&raw).map_err(CliError::runtime)?;
    let dataset = match dataset {
        Some(path) => eval::load_dataset(path).map_err(CliError::runtime)?,
        None => Vec::new(),
    };
    let annotations = match annotations {
        Some(path) => eval::load_annotations(path).map_err(CliError::runtime)?,
        None => Vec::new(),
    };
    let scores: Vec<GptScore> = match gpt_scores {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .map_err(|e| CliError::runtime(format!("cannot read `{}`: {e}", path.display())))?;
            raw.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| serde_json::from_str(l).map_err(|e| CliError::runtime(e.to_string())))
                .collect::<Result<_, _>>()?
        }
        None => Vec::new(),
    };
    let report = eval::aggregate_report(&records, &dataset, &scores, &annotations);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match out {
        Some(path) => std::fs::write(path, &json)
            .map_err(|e| CliError::runtime(format!("cannot write `{}`: {e}", path.display())))?,
        None => println!("{json}"),
    }
    if let Some(path) = csv_out {
        std::fs::write(path, eval::report_to_csv(&report))
            .map_err(|e| CliError::runtime(format!("cannot write `{}`: {e}", path.display())))?;
    }
    // Always print the headline table.
    eprint!("{}", eval::report_to_csv(&report));
    Ok(())
}

struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn runtime(message: impl ToString) -> Self {
        Self { message: message.to_string(), code: 1 }
    }
    fn usage(message: impl ToString) -> Self {
        Self { message: message.to_string(), code: 2 }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest { input, format, out, extract_endpoint } => {
            cmd_ingest(input, format, out.as_deref(), extract_endpoint.clone())
        }
        Command::Ask { doc, question, strategy, trace, repl, provider } => {
            cmd_ask(doc, question, *strategy, *trace, *repl, provider)
        }
        Command::Eval { corpus, dataset, strategies, out, workers, provider } => {
            cmd_eval(corpus, dataset, strategies, out, *workers, provider)
        }
        Command::Report { run, annotations, dataset, gpt_scores, out, csv } => cmd_report(
            run,
            annotations.as_deref(),
            dataset.as_deref(),
            gpt_scores.as_deref(),
            out.as_deref(),
            csv.as_deref(),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
