//! Chunking, embeddings, cosine similarity, token counting, and budgeted
//! top-k selection. Shared by the `retrieve` triage function and both
//! retrieval baselines.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::triage::{Fragment, RetrievedContext};

/// Default chunk size in words.
pub const DEFAULT_CHUNK_SIZE: usize = 100;

/// Dimension of the local hashed term-frequency embedder.
pub const LOCAL_EMBED_DIM: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,
    #[error("vector index is empty")]
    EmptyIndex,
    #[error("embedding provider error: {0}")]
    Provider(String),
}

/// A contiguous run of at most `chunk_size` whitespace words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: usize,
    pub text: String,
    pub word_count: usize,
}

/// Split text into sequential chunks of `chunk_size` whitespace words.
/// Every chunk except possibly the last is exactly `chunk_size` words;
/// joining the chunks' word sequences reproduces the input's.
pub fn chunk_text(text: &str, chunk_size: usize) -> Vec<Chunk> {
    assert!(chunk_size >= 1, "chunk_size must be at least 1");
    let words: Vec<&str> = text.split_whitespace().collect();
    words
        .chunks(chunk_size)
        .enumerate()
        .map(|(id, piece)| Chunk {
            id,
            text: piece.join(" "),
            word_count: piece.len(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

/// cos(a, b) = dot(a, b) / (|a| * |b|)
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if a.dimension() != b.dimension() {
        return Err(RetrievalError::DimensionMismatch(a.dimension(), b.dimension()));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let norm_a = a.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b = b.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    Ok(dot / (norm_a * norm_b))
}

/// Embedding backend. Must be safe for concurrent calls.
pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    /// One vector per input text, order-preserving.
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, RetrievalError>;
}

/// Offline deterministic embedder: lowercased whitespace words hashed into
/// a fixed number of term-frequency buckets, L2-normalized. Depends only
/// on the multiset of words, so word order never changes the vector.
#[derive(Debug, Default, Clone)]
pub struct LocalHashEmbedder;

// FNV-1a, fixed here so vectors are stable across platforms and releases.
fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl EmbeddingProvider for LocalHashEmbedder {
    fn provider_id(&self) -> &str {
        "local-hash-tf-256"
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        Ok(texts
            .iter()
            .map(|text| {
                let mut values = vec![0.0f64; LOCAL_EMBED_DIM];
                for word in text.split_whitespace() {
                    let bucket = fnv1a_64(word.to_lowercase().as_bytes()) as usize % LOCAL_EMBED_DIM;
                    values[bucket] += 1.0;
                }
                let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for v in &mut values {
                        *v /= norm;
                    }
                }
                EmbeddingVector { values }
            })
            .collect())
    }
}

/// Remote embedding service speaking the common embeddings wire shape:
/// POST with `{"input": [...], "model": "..."}`, response
/// `{"data": [{"embedding": [...], "index": n}, ...]}`.
pub struct RemoteEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a [&'a str],
    model: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
    index: usize,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn provider_id(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        let mut request = self.client.post(&self.endpoint).json(&EmbedRequest {
            input: texts,
            model: &self.model,
        });
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| RetrievalError::Provider(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(RetrievalError::Provider(format!("HTTP {status}: {body}")));
        }
        let parsed: EmbedResponse = response
            .json()
            .map_err(|e| RetrievalError::Provider(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(RetrievalError::Provider(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut ordered = parsed.data;
        ordered.sort_by_key(|d| d.index);
        Ok(ordered
            .into_iter()
            .map(|d| EmbeddingVector { values: d.embedding })
            .collect())
    }
}

/// One embedded unit of text, addressable by ordinal id.
#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub id: usize,
    pub label: String,
    pub text: String,
    pub vector: EmbeddingVector,
}

/// Exact-scan vector index; documents here are small enough that nearest
/// neighbors never needs approximation.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    pub entries: Vec<IndexEntry>,
    pub provider_id: String,
}

impl VectorIndex {
    /// Embed labeled texts in order, assigning ordinal ids.
    pub fn build(
        provider: &dyn EmbeddingProvider,
        labeled_texts: &[(String, String)],
    ) -> Result<Self, RetrievalError> {
        let texts: Vec<&str> = labeled_texts.iter().map(|(_, t)| t.as_str()).collect();
        let vectors = provider.embed(&texts)?;
        let entries = labeled_texts
            .iter()
            .zip(vectors)
            .enumerate()
            .map(|(id, ((label, text), vector))| IndexEntry {
                id,
                label: label.clone(),
                text: text.clone(),
                vector,
            })
            .collect();
        Ok(Self {
            entries,
            provider_id: provider.provider_id().to_string(),
        })
    }
}

/// Heuristic token counter: ceil(words * 4 / 3). An exact subword
/// tokenizer can be substituted wherever a count is consumed; every
/// accounting path goes through this function.
pub fn count_tokens(text: &str) -> usize {
    let words = text.split_whitespace().count();
    (words * 4).div_ceil(3)
}

/// Truncate to the longest word prefix whose token count fits `budget`.
pub fn truncate_to_budget(text: &str, budget: usize) -> String {
    let max_words = budget * 3 / 4;
    text.split_whitespace()
        .take(max_words)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Rank entries by descending cosine similarity (ties: ascending id) and
/// greedily take whole entries while the running token total fits the
/// budget. If even the best entry does not fit, it is truncated so the
/// context is never empty.
pub fn top_k_within_budget(
    query_vec: &EmbeddingVector,
    index: &VectorIndex,
    budget: usize,
) -> Result<RetrievedContext, RetrievalError> {
    assert!(budget > 0, "budget must be positive");
    if index.entries.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    let mut scored: Vec<(f64, &IndexEntry)> = index
        .entries
        .iter()
        .map(|entry| Ok((cosine_similarity(query_vec, &entry.vector)?, entry)))
        .collect::<Result<_, RetrievalError>>()?;
    scored.sort_by(|(sa, ea), (sb, eb)| {
        sb.partial_cmp(sa)
            .expect("similarities are finite")
            .then(ea.id.cmp(&eb.id))
    });

    let mut fragments = Vec::new();
    let mut total = 0usize;
    for (_, entry) in &scored {
        let tokens = count_tokens(&entry.text);
        if total + tokens > budget {
            if fragments.is_empty() {
                let truncated = truncate_to_budget(&entry.text, budget);
                let tokens = count_tokens(&truncated);
                total = tokens;
                fragments.push(Fragment {
                    source_label: entry.label.clone(),
                    text: truncated,
                });
            }
            break;
        }
        total += tokens;
        fragments.push(Fragment {
            source_label: entry.label.clone(),
            text: entry.text.clone(),
        });
    }
    Ok(RetrievedContext {
        fragments,
        token_count: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn chunk_sizes_follow_partition() {
        let chunks = chunk_text(&words(250), 100);
        let counts: Vec<usize> = chunks.iter().map(|c| c.word_count).collect();
        assert_eq!(counts, vec![100, 100, 50]);
    }

    #[test]
    fn exact_multiple_is_one_chunk() {
        assert_eq!(chunk_text(&words(100), 100).len(), 1);
    }

    #[test]
    fn empty_text_no_chunks() {
        assert!(chunk_text("", 100).is_empty());
    }

    #[test]
    fn cosine_orthogonal_and_identity() {
        let e1 = EmbeddingVector { values: vec![1.0, 0.0] };
        let e2 = EmbeddingVector { values: vec![0.0, 1.0] };
        assert_eq!(cosine_similarity(&e1, &e2).unwrap(), 0.0);
        let v = EmbeddingVector { values: vec![0.3, -1.2, 4.0] };
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_hand_computed() {
        // dot = 2 + 2 + 4 = 8; both norms sqrt(9) = 3
        let a = EmbeddingVector { values: vec![1.0, 2.0, 2.0] };
        let b = EmbeddingVector { values: vec![2.0, 1.0, 2.0] };
        let got = cosine_similarity(&a, &b).unwrap();
        assert!((got - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        let a = EmbeddingVector { values: vec![1.0] };
        let b = EmbeddingVector { values: vec![1.0, 2.0] };
        assert_eq!(
            cosine_similarity(&a, &b).unwrap_err(),
            RetrievalError::DimensionMismatch(1, 2)
        );
        let z = EmbeddingVector { values: vec![0.0] };
        let o = EmbeddingVector { values: vec![1.0] };
        assert_eq!(cosine_similarity(&z, &o).unwrap_err(), RetrievalError::ZeroVector);
    }

    #[test]
    fn local_embedder_deterministic() {
        let embedder = LocalHashEmbedder;
        let a = embedder.embed(&["alpha beta gamma"]).unwrap();
        let b = embedder.embed(&["alpha beta gamma"]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn local_embedder_order_insensitive() {
        let embedder = LocalHashEmbedder;
        let vs = embedder.embed(&["alpha beta gamma", "gamma alpha beta"]).unwrap();
        assert_eq!(vs[0], vs[1]);
    }

    #[test]
    fn disjoint_vocabulary_near_zero_cosine() {
        let embedder = LocalHashEmbedder;
        let vs = embedder
            .embed(&["aardvark bison cougar", "delta epsilon zeta"])
            .unwrap();
        let cos = cosine_similarity(&vs[0], &vs[1]).unwrap();
        assert!(cos.abs() < 0.05, "got {cos}");
    }

    #[test]
    fn token_count_formula() {
        assert_eq!(count_tokens(&words(300)), 400);
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("one"), 2);
    }

    fn entry(id: usize, vector: Vec<f64>, n_words: usize) -> IndexEntry {
        IndexEntry {
            id,
            label: format!("chunk {id}"),
            text: words(n_words),
            vector: EmbeddingVector { values: vector },
        }
    }

    #[test]
    fn budget_takes_greedy_prefix() {
        // 10 tokens each needs ceil(w*4/3)=10 -> 7 words
        let index = VectorIndex {
            entries: vec![
                entry(0, vec![1.0, 0.0], 7),
                entry(1, vec![0.7, 0.7], 7),
                entry(2, vec![0.0, 1.0], 7),
            ],
            provider_id: "test".into(),
        };
        let query = EmbeddingVector { values: vec![1.0, 0.2] };
        let ctx = top_k_within_budget(&query, &index, 25).unwrap();
        assert_eq!(ctx.fragments.len(), 2);
        assert_eq!(ctx.fragments[0].source_label, "chunk 0");
        assert_eq!(ctx.fragments[1].source_label, "chunk 1");
        assert!(ctx.token_count <= 25);
    }

    #[test]
    fn equal_similarity_lower_id_first() {
        let index = VectorIndex {
            entries: vec![entry(0, vec![1.0, 0.0], 3), entry(1, vec![1.0, 0.0], 3)],
            provider_id: "test".into(),
        };
        let query = EmbeddingVector { values: vec![1.0, 0.0] };
        let ctx = top_k_within_budget(&query, &index, 100).unwrap();
        assert_eq!(ctx.fragments[0].source_label, "chunk 0");
        assert_eq!(ctx.fragments[1].source_label, "chunk 1");
    }

    #[test]
    fn over_budget_top_entry_truncated() {
        let index = VectorIndex {
            entries: vec![entry(0, vec![1.0], 7)],
            provider_id: "test".into(),
        };
        let query = EmbeddingVector { values: vec![1.0] };
        let ctx = top_k_within_budget(&query, &index, 5).unwrap();
        assert_eq!(ctx.fragments.len(), 1);
        assert!(ctx.token_count <= 5);
        assert!(ctx.token_count > 0);
        assert_eq!(ctx.token_count, count_tokens(&ctx.fragments[0].text));
    }

    #[test]
    fn empty_index_errors() {
        let index = VectorIndex { entries: vec![], provider_id: "test".into() };
        let query = EmbeddingVector { values: vec![1.0] };
        assert_eq!(
            top_k_within_budget(&query, &index, 10).unwrap_err(),
            RetrievalError::EmptyIndex
        );
    }
}
