//! Structure-aware document question answering.
//!
//! A document is represented as a tree of structural elements (sections,
//! paragraphs, tables, figures) with page spans. An LLM is given a JSON
//! skeleton of that structure plus five callable functions to fetch the
//! parts it needs before answering. Two embedding-retrieval baselines and
//! an evaluation harness (scoring, agreement statistics, report
//! aggregation) round out the pipeline.
//!
//! Modules:
//! - [`doc_model`] — structure tree, index, metadata serialization
//! - [`ingest`] — interchange JSON and HTML parsers, extraction client
//! - [`triage`] — the five model-callable fetch functions
//! - [`retrieval`] — chunking, embeddings, cosine top-k, token counting
//! - [`llm`] — chat message model, wire codec, providers
//! - [`orchestrator`] — the three answering strategies
//! - [`eval`] — dataset schema, eval runner, statistics, reports

pub mod doc_model;
pub mod eval;
pub mod ingest;
pub mod llm;
pub mod orchestrator;
pub mod retrieval;
pub mod triage;
