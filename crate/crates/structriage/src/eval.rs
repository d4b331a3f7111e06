//! Evaluation harness: dataset schema and loader, batch runner, automated
//! scoring, agreement and correlation statistics, readability, and report
//! aggregation.

use std::collections::BTreeMap;
use std::hash::Hash;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc_model::DocumentIndex;
use crate::llm::{AssistantAction, ChatMessage, Provider};
use crate::orchestrator::{self, QARecord, SessionConfig, Strategy, TraceCall, TraceEvent};
use crate::retrieval::EmbeddingProvider;

/// The eleven question categories of the evaluation taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    FigureQuestions,
    TextQuestions,
    TableReasoning,
    StructureQuestions,
    Summarization,
    Extraction,
    Rewrite,
    OutsideQuestions,
    CrossPageTasks,
    Classification,
    TrickQuestion,
}

impl Category {
    pub const ALL: [Category; 11] = [
        Category::FigureQuestions,
        Category::TextQuestions,
        Category::TableReasoning,
        Category::StructureQuestions,
        Category::Summarization,
        Category::Extraction,
        Category::Rewrite,
        Category::OutsideQuestions,
        Category::CrossPageTasks,
        Category::Classification,
        Category::TrickQuestion,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::FigureQuestions => "figure_questions",
            Category::TextQuestions => "text_questions",
            Category::TableReasoning => "table_reasoning",
            Category::StructureQuestions => "structure_questions",
            Category::Summarization => "summarization",
            Category::Extraction => "extraction",
            Category::Rewrite => "rewrite",
            Category::OutsideQuestions => "outside_questions",
            Category::CrossPageTasks => "cross_page_tasks",
            Category::Classification => "classification",
            Category::TrickQuestion => "trick_question",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    Unsure,
}

impl Difficulty {
    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
            Difficulty::Unsure => "unsure",
        }
    }
}

/// One dataset question. JSONL fields: id, document_id, text, category,
/// difficulty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionItem {
    pub id: String,
    pub document_id: String,
    pub text: String,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
}

/// Per-answer quality scores on the five 1-5 dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerScore {
    pub accuracy: f64,
    pub informativeness: f64,
    pub readability: f64,
    pub clarity: f64,
    pub overall: f64,
    pub scorer_id: String,
}

/// One row of the human annotation CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub question_id: String,
    pub strategy: Strategy,
    pub rank: u32,
    pub accuracy: f64,
    pub informativeness: f64,
    pub readability: f64,
    pub clarity: f64,
    pub overall: f64,
    pub annotator_id: String,
}

/// One automated score for a (question, strategy) answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GptScore {
    pub question_id: String,
    pub strategy: Strategy,
    pub score: f64,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset line {line}: {detail}")]
    Schema { line: usize, detail: String },
    #[error("dataset references unknown document `{0}`")]
    CorpusMiss(String),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("series is constant; correlation undefined")]
    ConstantSeries,
    #[error("expected chance agreement is 1; kappa undefined")]
    DegenerateAgreement,
    #[error("text has no words")]
    EmptyText,
    #[error("could not parse `{0}` as a score in 1..=5")]
    ScoreParse(String),
    #[error("record has an empty answer; nothing to score")]
    EmptyAnswer,
    #[error(transparent)]
    Llm(#[from] crate::llm::LlmError),
    #[error("io error: {0}")]
    Io(String),
    #[error("csv error: {0}")]
    Csv(String),
}

/// Load and validate a JSONL dataset.
pub fn load_dataset(path: &std::path::Path) -> Result<Vec<QuestionItem>, EvalError> {
    let raw = std::fs::read_to_string(path).map_err(|e| EvalError::Io(e.to_string()))?;
    parse_dataset(&raw)
}

pub fn parse_dataset(raw: &str) -> Result<Vec<QuestionItem>, EvalError> {
    raw.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| EvalError::Schema {
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

/// Run every question under every strategy. Per-item failures are
/// captured in the record, never dropped; an unresolved document id
/// aborts before any session starts.
pub fn run_eval(
    corpus: &BTreeMap<String, DocumentIndex>,
    dataset: &[QuestionItem],
    strategies: &[Strategy],
    provider: &dyn Provider,
    embedder: &dyn EmbeddingProvider,
    config: &SessionConfig,
    workers: usize,
) -> Result<Vec<QARecord>, EvalError> {
    for item in dataset {
        if !corpus.contains_key(&item.document_id) {
            return Err(EvalError::CorpusMiss(item.document_id.clone()));
        }
    }
    let tasks: Vec<(&QuestionItem, Strategy)> = dataset
        .iter()
        .flat_map(|item| strategies.iter().map(move |&s| (item, s)))
        .collect();

    let run_one = |(item, strategy): &(&QuestionItem, Strategy)| -> QARecord {
        let index = &corpus[&item.document_id];
        let mut record =
            match orchestrator::answer(*strategy, index, &item.text, provider, embedder, config) {
                Ok(record) => record,
                Err(err) => QARecord {
                    question_id: None,
                    question: item.text.clone(),
                    strategy: *strategy,
                    answer: String::new(),
                    trace: vec![TraceEvent {
                        call: TraceCall::Protocol { detail: err.to_string() },
                        ok: false,
                        error: Some(err.to_string()),
                        token_count: 0,
                        sources: Vec::new(),
                    }],
                    retrieved_tokens: 0,
                    turns_used: 0,
                    turn_limit_exceeded: true,
                },
            };
        record.question_id = Some(item.id.clone());
        record
    };

    let mut records: Vec<(usize, QARecord)> = if workers <= 1 {
        tasks.iter().map(run_one).enumerate().collect()
    } else {
        let results = Mutex::new(Vec::with_capacity(tasks.len()));
        let next = std::sync::atomic::AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers.min(tasks.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= tasks.len() {
                        break;
                    }
                    let record = run_one(&tasks[i]);
                    results.lock().expect("results lock").push((i, record));
                });
            }
        });
        results.into_inner().expect("results lock")
    };
    // Merge deterministically in (question, strategy) task order.
    records.sort_by_key(|(i, _)| *i);
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

/// Score one answer 1-5 with a judge model and a strict numeric parser.
pub fn gpt_score(record: &QARecord, provider: &dyn Provider) -> Result<f64, EvalError> {
    if record.answer.is_empty() {
        return Err(EvalError::EmptyAnswer);
    }
    let prompt = format!(
        "Give a score (1-5) for how well the question was answered. Only provide the numerical \
         rating. Do not give any explanation for your rating.\n\nQuestion: {}\nAnswer: {}",
        record.question, record.answer
    );
    let completion = provider.complete(&[ChatMessage::system(prompt)], &[])?;
    let text = match completion.action {
        AssistantAction::FinalAnswer { text } => text,
        AssistantAction::FunctionCall { name, .. } => {
            return Err(EvalError::ScoreParse(format!("function call `{name}`")));
        }
    };
    let trimmed = text.trim();
    let score: f64 = trimmed
        .parse()
        .map_err(|_| EvalError::ScoreParse(trimmed.to_string()))?;
    if !(1.0..=5.0).contains(&score) {
        return Err(EvalError::ScoreParse(trimmed.to_string()));
    }
    Ok(score)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(EvalError::LengthMismatch(xs.len(), 2));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(EvalError::ConstantSeries);
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

/// Cohen's kappa: (p_o - p_e) / (1 - p_e), with chance agreement from the
/// raters' marginal label frequencies.
pub fn cohens_kappa<T: Eq + Hash + Clone + Ord>(a: &[T], b: &[T]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::LengthMismatch(0, 1));
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut freq_a: BTreeMap<&T, f64> = BTreeMap::new();
    let mut freq_b: BTreeMap<&T, f64> = BTreeMap::new();
    for label in a {
        *freq_a.entry(label).or_insert(0.0) += 1.0;
    }
    for label in b {
        *freq_b.entry(label).or_insert(0.0) += 1.0;
    }
    let expected: f64 = freq_a
        .iter()
        .map(|(label, count_a)| count_a / n * freq_b.get(label).copied().unwrap_or(0.0) / n)
        .sum();
    if (1.0 - expected).abs() < 1e-12 {
        return Err(EvalError::DegenerateAgreement);
    }
    Ok((observed - expected) / (1.0 - expected))
}

/// Count syllables: vowel groups (a, e, i, o, u, y), minus a silent
/// trailing `e`, minimum one per word.
pub fn count_syllables(word: &str) -> usize {
    let letters: Vec<char> = word
        .chars()
        .filter(|c| c.is_ascii_alphabetic())
        .map(|c| c.to_ascii_lowercase())
        .collect();
    if letters.is_empty() {
        return 0;
    }
    let is_vowel = |c: char| "aeiouy".contains(c);
    let mut groups = 0usize;
    let mut in_group = false;
    for &c in &letters {
        if is_vowel(c) {
            if !in_group {
                groups += 1;
            }
            in_group = true;
        } else {
            in_group = false;
        }
    }
    if letters.len() >= 2 && *letters.last().unwrap() == 'e' && !is_vowel(letters[letters.len() - 2])
    {
        groups = groups.saturating_sub(1);
    }
    groups.max(1)
}

/// Split on terminal punctuation (., !, ?) followed by whitespace or end
/// of text. Text with words but no terminator counts as one sentence.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut sentences = Vec::new();
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if (b == b'.' || b == b'!' || b == b'?')
            && (i + 1 == bytes.len() || bytes[i + 1].is_ascii_whitespace())
        {
            let candidate = text[start..=i].trim();
            if candidate.split_whitespace().next().is_some() {
                sentences.push(candidate);
            }
            start = i + 1;
        }
    }
    let tail = text[start..].trim();
    if tail.split_whitespace().next().is_some() {
        sentences.push(tail);
    }
    sentences
}

/// Flesch reading ease:
/// 206.835 - 1.015 * (words/sentences) - 84.6 * (syllables/words)
pub fn flesch_reading_ease(text: &str) -> Result<f64, EvalError> {
    let sentences = split_sentences(text);
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.is_empty() || sentences.is_empty() {
        return Err(EvalError::EmptyText);
    }
    let syllables: usize = words.iter().map(|w| count_syllables(w)).sum();
    let word_count = words.len() as f64;
    let sentence_count = sentences.len() as f64;
    Ok(206.835 - 1.015 * (word_count / sentence_count) - 84.6 * (syllables as f64 / word_count))
}

/// Mean of the five score dimensions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DimMeans {
    pub accuracy: f64,
    pub informativeness: f64,
    pub readability: f64,
    pub clarity: f64,
    pub overall: f64,
    pub count: usize,
}

impl DimMeans {
    fn accumulate(rows: impl Iterator<Item = (f64, f64, f64, f64, f64)>) -> Option<Self> {
        let mut sums = DimMeans::default();
        for (accuracy, informativeness, readability, clarity, overall) in rows {
            sums.accuracy += accuracy;
            sums.informativeness += informativeness;
            sums.readability += readability;
            sums.clarity += clarity;
            sums.overall += overall;
            sums.count += 1;
        }
        if sums.count == 0 {
            return None;
        }
        let n = sums.count as f64;
        Some(DimMeans {
            accuracy: sums.accuracy / n,
            informativeness: sums.informativeness / n,
            readability: sums.readability / n,
            clarity: sums.clarity / n,
            overall: sums.overall / n,
            count: sums.count,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StrategyStats {
    pub records: usize,
    pub mean_retrieved_tokens: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_means: Option<DimMeans>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_gpt_score: Option<f64>,
}

/// Aggregated evaluation results; keys are stable strings so the report
/// serializes the same way regardless of input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_strategy: BTreeMap<String, StrategyStats>,
    /// category -> strategy -> score means
    pub per_category: BTreeMap<String, BTreeMap<String, DimMeans>>,
    /// strategy -> fraction of annotator rankings placing it first
    pub preference: BTreeMap<String, f64>,
    pub difficulty_histogram: BTreeMap<String, usize>,
}

/// Compute every report field from records, automated scores, and human
/// annotations. Any of the optional inputs may be empty.
pub fn aggregate_report(
    records: &[QARecord],
    dataset: &[QuestionItem],
    gpt_scores: &[GptScore],
    annotations: &[Annotation],
) -> EvalReport {
    let mut per_strategy: BTreeMap<String, StrategyStats> = BTreeMap::new();
    let mut strategies: Vec<Strategy> = records.iter().map(|r| r.strategy).collect();
    strategies.sort_unstable();
    strategies.dedup();
    for strategy in &strategies {
        let token_counts: Vec<f64> = records
            .iter()
            .filter(|r| r.strategy == *strategy)
            .map(|r| r.retrieved_tokens as f64)
            .collect();
        let mean_retrieved_tokens = token_counts.iter().sum::<f64>() / token_counts.len() as f64;
        let score_means = DimMeans::accumulate(
            annotations
                .iter()
                .filter(|a| a.strategy == *strategy)
                .map(|a| (a.accuracy, a.informativeness, a.readability, a.clarity, a.overall)),
        );
        let strategy_gpt: Vec<f64> = gpt_scores
            .iter()
            .filter(|s| s.strategy == *strategy)
            .map(|s| s.score)
            .collect();
        let mean_gpt_score = (!strategy_gpt.is_empty())
            .then(|| strategy_gpt.iter().sum::<f64>() / strategy_gpt.len() as f64);
        per_strategy.insert(
            strategy.to_string(),
            StrategyStats {
                records: token_counts.len(),
                mean_retrieved_tokens,
                score_means,
                mean_gpt_score,
            },
        );
    }

    let category_of: BTreeMap<&str, Category> = dataset
        .iter()
        .map(|item| (item.id.as_str(), item.category))
        .collect();
    let mut per_category: BTreeMap<String, BTreeMap<String, DimMeans>> = BTreeMap::new();
    for category in Category::ALL {
        let mut by_strategy = BTreeMap::new();
        for strategy in &strategies {
            let means = DimMeans::accumulate(
                annotations
                    .iter()
                    .filter(|a| {
                        a.strategy == *strategy
                            && category_of.get(a.question_id.as_str()) == Some(&category)
                    })
                    .map(|a| (a.accuracy, a.informativeness, a.readability, a.clarity, a.overall)),
            );
            if let Some(means) = means {
                by_strategy.insert(strategy.to_string(), means);
            }
        }
        if !by_strategy.is_empty() {
            per_category.insert(category.as_str().to_string(), by_strategy);
        }
    }

    // Preference: per (annotator, question) ranking group, the strategy
    // ranked 1 gets the vote.
    // Every annotated strategy appears, so never-preferred ones report 0.
    let mut first_counts: BTreeMap<String, usize> = annotations
        .iter()
        .map(|a| (a.strategy.to_string(), 0))
        .collect();
    let mut total_groups = 0usize;
    let mut groups: BTreeMap<(String, String), Vec<&Annotation>> = BTreeMap::new();
    for annotation in annotations {
        groups
            .entry((annotation.annotator_id.clone(), annotation.question_id.clone()))
            .or_default()
            .push(annotation);
    }
    for group in groups.values() {
        if let Some(first) = group.iter().find(|a| a.rank == 1) {
            *first_counts.entry(first.strategy.to_string()).or_insert(0) += 1;
            total_groups += 1;
        }
    }
    let preference = if total_groups == 0 {
        BTreeMap::new()
    } else {
        first_counts
            .into_iter()
            .map(|(strategy, count)| (strategy, count as f64 / total_groups as f64))
            .collect()
    };

    let mut difficulty_histogram = BTreeMap::new();
    for item in dataset {
        if let Some(difficulty) = item.difficulty {
            *difficulty_histogram
                .entry(difficulty.as_str().to_string())
                .or_insert(0) += 1;
        }
    }

    EvalReport {
        per_strategy,
        per_category,
        preference,
        difficulty_histogram,
    }
}

/// Read annotations from CSV with headers matching [`Annotation`] fields.
pub fn load_annotations(path: &std::path::Path) -> Result<Vec<Annotation>, EvalError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| EvalError::Csv(e.to_string()))?;
    reader
        .deserialize()
        .map(|row| row.map_err(|e| EvalError::Csv(e.to_string())))
        .collect()
}

/// Tabular rendering of the per-strategy block of a report.
pub fn report_to_csv(report: &EvalReport) -> String {
    let mut out = String::from(
        "strategy,records,mean_retrieved_tokens,mean_accuracy,mean_informativeness,\
         mean_readability,mean_clarity,mean_overall,mean_gpt_score,preference_fraction\n",
    );
    for (strategy, stats) in &report.per_strategy {
        let means = stats.score_means.clone().unwrap_or_default();
        let fmt_opt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
        let fmt_mean = |v: f64| {
            if stats.score_means.is_some() {
                format!("{v:.4}")
            } else {
                String::new()
            }
        };
        out.push_str(&format!(
            "{},{},{:.4},{},{},{},{},{},{},{}\n",
            strategy,
            stats.records,
            stats.mean_retrieved_tokens,
            fmt_mean(means.accuracy),
            fmt_mean(means.informativeness),
            fmt_mean(means.readability),
            fmt_mean(means.clarity),
            fmt_mean(means.overall),
            fmt_opt(stats.mean_gpt_score),
            fmt_opt(report.preference.get(strategy).copied()),
        ));
    }
    out
}

/// Serialize records as JSONL, one record per line.
pub fn records_to_jsonl(records: &[QARecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes"))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

/// Parse a JSONL run file, naming the offending line on failure.
pub fn records_from_jsonl(raw: &str) -> Result<Vec<QARecord>, EvalError> {
    raw.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| EvalError::Schema {
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}
