//! The five model-callable functions over a [`DocumentIndex`]:
//! `fetch_pages`, `fetch_sections`, `fetch_figure`, `fetch_table`, and
//! `retrieve`. All are pure with respect to the index; unknown ids are
//! typed errors that the orchestrator feeds back to the model as
//! function-result text rather than aborting the session.

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::doc_model::DocumentIndex;
use crate::llm::ToolDeclaration;
use crate::retrieval::{self, count_tokens, EmbeddingProvider, RetrievalError, VectorIndex};

/// One labeled piece of retrieved text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub source_label: String,
    pub text: String,
}

/// Labeled fragments plus their total token count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub fragments: Vec<Fragment>,
    pub token_count: usize,
}

impl RetrievedContext {
    fn from_fragments(fragments: Vec<Fragment>) -> Self {
        let token_count = fragments.iter().map(|f| count_tokens(&f.text)).sum();
        Self { fragments, token_count }
    }

    /// Render for a function-result chat message.
    pub fn as_message_text(&self) -> String {
        self.fragments
            .iter()
            .map(|f| format!("[{}]\n{}", f.source_label, f.text))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TriageError {
    #[error("page {0} out of range")]
    PageOutOfRange(u32),
    #[error("unknown section id `{0}`")]
    UnknownSection(String),
    #[error("unknown figure id `{0}`")]
    UnknownFigure(String),
    #[error("unknown table id `{0}`")]
    UnknownTable(String),
    #[error("argument list is empty")]
    EmptyArgument,
    #[error("query is empty")]
    EmptyQuery,
    #[error("document has no text to retrieve from")]
    EmptyDocument,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("arguments do not match function `{function}`: {detail}")]
    BadArguments { function: String, detail: String },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
}

/// A decoded call to one of the five functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "function", content = "arguments", rename_all = "snake_case")]
pub enum TriageCall {
    FetchPages { pages: Vec<u32> },
    FetchSections { section_ids: Vec<String> },
    FetchFigure { figure_ids: Vec<String> },
    FetchTable { table_ids: Vec<String> },
    Retrieve { query: String },
}

impl TriageCall {
    /// Decode a named function call's JSON arguments.
    pub fn from_named_args(name: &str, args: &serde_json::Value) -> Result<Self, TriageError> {
        let bad = |detail: String| TriageError::BadArguments {
            function: name.to_string(),
            detail,
        };
        let wrapped = json!({ "function": name, "arguments": args });
        match name {
            "fetch_pages" | "fetch_sections" | "fetch_figure" | "fetch_table" | "retrieve" => {
                serde_json::from_value(wrapped).map_err(|e| bad(e.to_string()))
            }
            other => Err(TriageError::UnknownFunction(other.to_string())),
        }
    }

    pub fn function_name(&self) -> &'static str {
        match self {
            TriageCall::FetchPages { .. } => "fetch_pages",
            TriageCall::FetchSections { .. } => "fetch_sections",
            TriageCall::FetchFigure { .. } => "fetch_figure",
            TriageCall::FetchTable { .. } => "fetch_table",
            TriageCall::Retrieve { .. } => "retrieve",
        }
    }
}

/// Text of every requested page, ascending, duplicates dropped.
pub fn fetch_pages(index: &DocumentIndex, pages: &[u32]) -> Result<RetrievedContext, TriageError> {
    if pages.is_empty() {
        return Err(TriageError::EmptyArgument);
    }
    let mut wanted: Vec<u32> = pages.to_vec();
    wanted.sort_unstable();
    wanted.dedup();
    let fragments = wanted
        .into_iter()
        .map(|page| {
            let text = index
                .page_text(page)
                .map_err(|_| TriageError::PageOutOfRange(page))?;
            Ok(Fragment {
                source_label: format!("page {page}"),
                text,
            })
        })
        .collect::<Result<_, TriageError>>()?;
    Ok(RetrievedContext::from_fragments(fragments))
}

fn dedup_preserving_order(ids: &[String]) -> Vec<&str> {
    let mut seen = Vec::new();
    for id in ids {
        if !seen.contains(&id.as_str()) {
            seen.push(id.as_str());
        }
    }
    seen
}

/// Each section's markdown (heading line plus subtree), input order,
/// duplicates dropped.
pub fn fetch_sections(
    index: &DocumentIndex,
    section_ids: &[String],
) -> Result<RetrievedContext, TriageError> {
    if section_ids.is_empty() {
        return Err(TriageError::EmptyArgument);
    }
    let fragments = dedup_preserving_order(section_ids)
        .into_iter()
        .map(|id| {
            let text = index
                .section_markdown(id)
                .ok_or_else(|| TriageError::UnknownSection(id.to_string()))?;
            Ok(Fragment {
                source_label: format!("section {id}"),
                text,
            })
        })
        .collect::<Result<_, TriageError>>()?;
    Ok(RetrievedContext::from_fragments(fragments))
}

/// Figure captions, input order, duplicates dropped.
pub fn fetch_figure(
    index: &DocumentIndex,
    figure_ids: &[String],
) -> Result<RetrievedContext, TriageError> {
    if figure_ids.is_empty() {
        return Err(TriageError::EmptyArgument);
    }
    let fragments = dedup_preserving_order(figure_ids)
        .into_iter()
        .map(|id| {
            let text = index
                .figure_caption(id)
                .ok_or_else(|| TriageError::UnknownFigure(id.to_string()))?;
            Ok(Fragment {
                source_label: format!("figure {id}"),
                text: text.to_string(),
            })
        })
        .collect::<Result<_, TriageError>>()?;
    Ok(RetrievedContext::from_fragments(fragments))
}

/// Table caption plus markdown body, input order, duplicates dropped.
pub fn fetch_table(
    index: &DocumentIndex,
    table_ids: &[String],
) -> Result<RetrievedContext, TriageError> {
    if table_ids.is_empty() {
        return Err(TriageError::EmptyArgument);
    }
    let fragments = dedup_preserving_order(table_ids)
        .into_iter()
        .map(|id| {
            let text = index
                .table_markdown(id)
                .ok_or_else(|| TriageError::UnknownTable(id.to_string()))?;
            Ok(Fragment {
                source_label: format!("table {id}"),
                text,
            })
        })
        .collect::<Result<_, TriageError>>()?;
    Ok(RetrievedContext::from_fragments(fragments))
}

/// Chunk the whole document, embed, and select the chunks most similar to
/// the query within the token budget.
pub fn retrieve(
    index: &DocumentIndex,
    query: &str,
    budget: usize,
    embedder: &dyn EmbeddingProvider,
) -> Result<RetrievedContext, TriageError> {
    if query.trim().is_empty() {
        return Err(TriageError::EmptyQuery);
    }
    let full_text = (1..=index.page_count())
        .map(|p| index.page_text(p).expect("page within count"))
        .collect::<Vec<_>>()
        .join("\n\n");
    let chunks = retrieval::chunk_text(&full_text, retrieval::DEFAULT_CHUNK_SIZE);
    if chunks.is_empty() {
        return Err(TriageError::EmptyDocument);
    }
    let labeled: Vec<(String, String)> = chunks
        .iter()
        .map(|c| (format!("chunk {}", c.id), c.text.clone()))
        .collect();
    let vector_index = VectorIndex::build(embedder, &labeled)?;
    let query_vec = embedder.embed(&[query])?.remove(0);
    Ok(retrieval::top_k_within_budget(&query_vec, &vector_index, budget)?)
}

/// Execute a decoded call against the index.
pub fn execute(
    index: &DocumentIndex,
    call: &TriageCall,
    retrieve_budget: usize,
    embedder: &dyn EmbeddingProvider,
) -> Result<RetrievedContext, TriageError> {
    match call {
        TriageCall::FetchPages { pages } => fetch_pages(index, pages),
        TriageCall::FetchSections { section_ids } => fetch_sections(index, section_ids),
        TriageCall::FetchFigure { figure_ids } => fetch_figure(index, figure_ids),
        TriageCall::FetchTable { table_ids } => fetch_table(index, table_ids),
        TriageCall::Retrieve { query } => retrieve(index, query, retrieve_budget, embedder),
    }
}

/// Tool declarations for the five functions, in a fixed order.
pub fn tool_declarations() -> Vec<ToolDeclaration> {
    vec![
        ToolDeclaration {
            name: "fetch_pages".into(),
            description: "Get the text contained in the pages listed.".into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "pages": {
                        "type": "array",
                        "items": { "type": "integer", "minimum": 1 },
                        "description": "1-based page numbers to fetch"
                    }
                },
                "required": ["pages"]
            }),
        },
        ToolDeclaration {
            name: "fetch_sections".into(),
            description: "Get the text contained in the section listed.".into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "section_ids": {
                        "type": "array",
                        "items": { "type": "string" },
                        "description": "section ids from the document metadata"
                    }
                },
                "required": ["section_ids"]
            }),
        },
        ToolDeclaration {
            name: "fetch_figure".into(),
            description: "Get the text contained in the figure caption listed.".into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "figure_ids": {
                        "type": "array",
                        "items": { "type": "string" },
                        "description": "figure ids from the document metadata"
                    }
                },
                "required": ["figure_ids"]
            }),
        },
        ToolDeclaration {
            name: "fetch_table".into(),
            description: "Get the text contained in the table caption listed.".into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "table_ids": {
                        "type": "array",
                        "items": { "type": "string" },
                        "description": "table ids from the document metadata"
                    }
                },
                "required": ["table_ids"]
            }),
        },
        ToolDeclaration {
            name: "retrieve".into(),
            description: "Issue a natural language query over the document, and fetch relevant chunks.".into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "query": {
                        "type": "string",
                        "description": "natural language query"
                    }
                },
                "required": ["query"]
            }),
        },
    ]
}
