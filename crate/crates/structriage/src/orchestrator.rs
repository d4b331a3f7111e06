//! The three answering strategies: structure-triage question answering
//! plus the page-retrieval and chunk-retrieval baselines. Every session
//! produces a [`QARecord`] with a full call trace and token accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc_model::{to_metadata, DocumentIndex};
use crate::llm::{AssistantAction, ChatMessage, LlmError, Provider};
use crate::retrieval::{self, EmbeddingProvider, VectorIndex};
use crate::triage::{self, RetrievedContext, TriageCall, TriageError};

/// Maximum consecutive failed function calls before the session aborts.
const MAX_CONSECUTIVE_ERRORS: u32 = 3;

pub const INSTRUCTION: &str = "You are an expert document question answering system. \
You answer questions by finding relevant content in the document and answering questions \
based on that content.";

/// System prompt for the triage strategy: instruction plus the document's
/// structure metadata.
pub fn pdftriage_system_prompt(metadata_body: &str) -> String {
    format!("{INSTRUCTION}\n\nDocument: {metadata_body}")
}

/// Single-shot prompt for both retrieval baselines.
pub fn baseline_prompt(context: &str, question: &str) -> String {
    format!("{INSTRUCTION}\n\nDocument: {context}\n\nQuestion: {question}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    PdfTriage,
    PageRetrieval,
    ChunkRetrieval,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Strategy::PdfTriage => "pdf_triage",
            Strategy::PageRetrieval => "page_retrieval",
            Strategy::ChunkRetrieval => "chunk_retrieval",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pdftriage" | "pdf_triage" => Ok(Strategy::PdfTriage),
            "page" | "page_retrieval" => Ok(Strategy::PageRetrieval),
            "chunk" | "chunk_retrieval" => Ok(Strategy::ChunkRetrieval),
            other => Err(format!("unknown strategy `{other}` (use pdftriage|page|chunk)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub max_turns: u32,
    pub retrieve_budget: usize,
    pub baseline_context_budget: usize,
    pub model_id: String,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_turns: 8,
            retrieve_budget: 3000,
            baseline_context_budget: 3000,
            model_id: "gpt-35-turbo-0613".to_string(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.max_turns < 2 {
            return Err(OrchestratorError::Config(
                "max_turns must be at least 2 (one call plus one answer)".into(),
            ));
        }
        Ok(())
    }
}

/// What a trace event replays: a triage function call or a baseline
/// retrieval over the question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceCall {
    Triage { call: TriageCall },
    BaselineRetrieval { query: String },
    Protocol { detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub call: TraceCall,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub token_count: usize,
    /// Source labels of the retrieved fragments, in order.
    pub sources: Vec<String>,
}

/// One strategy's full answer trace for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QARecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<String>,
    pub question: String,
    pub strategy: Strategy,
    pub answer: String,
    pub trace: Vec<TraceEvent>,
    pub retrieved_tokens: usize,
    pub turns_used: u32,
    pub turn_limit_exceeded: bool,
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("document has no retrievable text")]
    EmptyDocument,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Retrieval(#[from] retrieval::RetrievalError),
}

fn success_event(call: TraceCall, ctx: &RetrievedContext) -> TraceEvent {
    TraceEvent {
        call,
        ok: true,
        error: None,
        token_count: ctx.token_count,
        sources: ctx.fragments.iter().map(|f| f.source_label.clone()).collect(),
    }
}

fn error_event(call: TraceCall, error: &TriageError) -> TraceEvent {
    TraceEvent {
        call,
        ok: false,
        error: Some(error.to_string()),
        token_count: 0,
        sources: Vec::new(),
    }
}

/// Run the triage strategy: metadata in the system prompt, one function
/// call per turn, final answer turn ends the loop. Function errors are
/// fed back to the model; only repeated protocol failures abort.
pub fn answer_pdftriage(
    index: &DocumentIndex,
    question: &str,
    provider: &dyn Provider,
    embedder: &dyn EmbeddingProvider,
    config: &SessionConfig,
) -> Result<QARecord, OrchestratorError> {
    config.validate()?;
    let metadata = to_metadata(index);
    let tools = triage::tool_declarations();
    let mut messages = vec![
        ChatMessage::system(pdftriage_system_prompt(&metadata.body)),
        ChatMessage::user(question),
    ];
    let mut trace: Vec<TraceEvent> = Vec::new();
    let mut turns_used = 0u32;
    let mut consecutive_errors = 0u32;
    let mut protocol_failures = 0u32;
    let mut answer = None;
    let mut turn_limit_exceeded = false;

    while turns_used < config.max_turns {
        turns_used += 1;
        let completion = match provider.complete(&messages, &tools) {
            Ok(c) => c,
            Err(LlmError::UnparseableArguments(args)) => {
                protocol_failures += 1;
                trace.push(TraceEvent {
                    call: TraceCall::Protocol { detail: format!("unparseable arguments: {args}") },
                    ok: false,
                    error: Some("function call arguments were not valid JSON".into()),
                    token_count: 0,
                    sources: Vec::new(),
                });
                if protocol_failures >= 2 {
                    return Err(OrchestratorError::Protocol(
                        "model produced unparseable function arguments twice".into(),
                    ));
                }
                messages.push(ChatMessage::user(
                    "Your function call arguments were not valid JSON. Call the function again \
                     with valid JSON arguments.",
                ));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        match completion.action {
            AssistantAction::FinalAnswer { text } => {
                answer = Some(text);
                break;
            }
            AssistantAction::FunctionCall { name, arguments } => {
                messages.push(ChatMessage::assistant_call(&name, &arguments));
                let outcome = TriageCall::from_named_args(&name, &arguments).and_then(|call| {
                    triage::execute(index, &call, config.retrieve_budget, embedder)
                        .map(|ctx| (call, ctx))
                });
                match outcome {
                    Ok((call, ctx)) => {
                        consecutive_errors = 0;
                        messages.push(ChatMessage::function_result(&name, ctx.as_message_text()));
                        trace.push(success_event(TraceCall::Triage { call }, &ctx));
                    }
                    Err(err) => {
                        consecutive_errors += 1;
                        messages.push(ChatMessage::function_result(&name, format!("Error: {err}")));
                        let call = TriageCall::from_named_args(&name, &arguments)
                            .map(|call| TraceCall::Triage { call })
                            .unwrap_or(TraceCall::Protocol { detail: format!("bad call to {name}") });
                        trace.push(error_event(call, &err));
                        if consecutive_errors >= MAX_CONSECUTIVE_ERRORS {
                            turn_limit_exceeded = true;
                            break;
                        }
                    }
                }
            }
        }
    }
    if answer.is_none() && !turn_limit_exceeded {
        turn_limit_exceeded = true;
    }
    let retrieved_tokens = trace.iter().map(|e| e.token_count).sum();
    Ok(QARecord {
        question_id: None,
        question: question.to_string(),
        strategy: Strategy::PdfTriage,
        answer: answer.unwrap_or_default(),
        trace,
        retrieved_tokens,
        turns_used,
        turn_limit_exceeded,
    })
}

/// Embed each non-empty page of the document.
pub fn build_page_index(
    index: &DocumentIndex,
    embedder: &dyn EmbeddingProvider,
) -> Result<VectorIndex, OrchestratorError> {
    let labeled: Vec<(String, String)> = (1..=index.page_count())
        .filter_map(|p| {
            let text = index.page_text(p).expect("page within count");
            (!text.is_empty()).then(|| (format!("page {p}"), text))
        })
        .collect();
    if labeled.is_empty() {
        return Err(OrchestratorError::EmptyDocument);
    }
    Ok(VectorIndex::build(embedder, &labeled)?)
}

/// Concatenate all document text and embed its 100-word chunks.
pub fn build_chunk_index(
    index: &DocumentIndex,
    embedder: &dyn EmbeddingProvider,
) -> Result<VectorIndex, OrchestratorError> {
    let full_text = (1..=index.page_count())
        .map(|p| index.page_text(p).expect("page within count"))
        .collect::<Vec<_>>()
        .join("\n\n");
    let chunks = retrieval::chunk_text(&full_text, retrieval::DEFAULT_CHUNK_SIZE);
    if chunks.is_empty() {
        return Err(OrchestratorError::EmptyDocument);
    }
    let labeled: Vec<(String, String)> = chunks
        .into_iter()
        .map(|c| (format!("chunk {}", c.id), c.text))
        .collect();
    Ok(VectorIndex::build(embedder, &labeled)?)
}

fn answer_baseline(
    vector_index: &VectorIndex,
    strategy: Strategy,
    question: &str,
    provider: &dyn Provider,
    embedder: &dyn EmbeddingProvider,
    config: &SessionConfig,
) -> Result<QARecord, OrchestratorError> {
    config.validate()?;
    let query_vec = embedder.embed(&[question])?.remove(0);
    let ctx = retrieval::top_k_within_budget(&query_vec, vector_index, config.baseline_context_budget)?;
    let prompt = baseline_prompt(&ctx.as_message_text(), question);
    let messages = vec![ChatMessage::system(prompt)];
    let completion = provider.complete(&messages, &[])?;
    let answer = match completion.action {
        AssistantAction::FinalAnswer { text } => text,
        AssistantAction::FunctionCall { name, .. } => {
            return Err(OrchestratorError::Protocol(format!(
                "baseline session declared no tools but the model called `{name}`"
            )));
        }
    };
    let trace = vec![success_event(
        TraceCall::BaselineRetrieval { query: question.to_string() },
        &ctx,
    )];
    Ok(QARecord {
        question_id: None,
        question: question.to_string(),
        strategy,
        answer,
        retrieved_tokens: ctx.token_count,
        trace,
        turns_used: 1,
        turn_limit_exceeded: false,
    })
}

/// Page-retrieval baseline: embed whole pages, fill the context budget by
/// cosine similarity, answer in one completion with no tools.
pub fn answer_page_retrieval(
    index: &DocumentIndex,
    question: &str,
    provider: &dyn Provider,
    embedder: &dyn EmbeddingProvider,
    config: &SessionConfig,
) -> Result<QARecord, OrchestratorError> {
    let pages = build_page_index(index, embedder)?;
    answer_baseline(&pages, Strategy::PageRetrieval, question, provider, embedder, config)
}

/// Chunk-retrieval baseline: 100-word chunks of the concatenated text.
pub fn answer_chunk_retrieval(
    index: &DocumentIndex,
    question: &str,
    provider: &dyn Provider,
    embedder: &dyn EmbeddingProvider,
    config: &SessionConfig,
) -> Result<QARecord, OrchestratorError> {
    let chunks = build_chunk_index(index, embedder)?;
    answer_baseline(&chunks, Strategy::ChunkRetrieval, question, provider, embedder, config)
}

/// Dispatch by strategy.
pub fn answer(
    strategy: Strategy,
    index: &DocumentIndex,
    question: &str,
    provider: &dyn Provider,
    embedder: &dyn EmbeddingProvider,
    config: &SessionConfig,
) -> Result<QARecord, OrchestratorError> {
    match strategy {
        Strategy::PdfTriage => answer_pdftriage(index, question, provider, embedder, config),
        Strategy::PageRetrieval => answer_page_retrieval(index, question, provider, embedder, config),
        Strategy::ChunkRetrieval => answer_chunk_retrieval(index, question, provider, embedder, config),
    }
}
