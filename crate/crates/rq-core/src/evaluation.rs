//! Metrics and experiment harness: accuracy, match score, token F1,
//! per-strategy benchmark runs with the upper bound, and the
//! retrieval-source resilience report.

use crate::engine::{self, SearchConfig, SelectionStrategy};
use crate::gateway::Generator;
use crate::protocol::Document;
use crate::retrieval::RetrieverProvider;
use crate::selection::{
    self, normalize_answer, EnsembleDomain, GroupKey, ScoredTrajectory,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("gold choice `{0}` is not among the choices")]
    GoldNotInChoices(String),
    #[error("ragged rows: {0}")]
    RaggedRows(String),
    #[error("benchmark needs at least one item")]
    NoItems,
    #[error("bad benchmark record: {0}")]
    BadRecord(String),
}

/// One benchmark question.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub question: String,
    /// Multiple-choice options, when the task is choice-based.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    /// Acceptable gold answers (for choice tasks: the gold choice text).
    pub gold: Vec<String>,
    /// Candidate document pool for reading-comprehension tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Document>>,
}

/// Which metric scores a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMetric {
    Accuracy,
    Match,
    F1,
}

/// Parse line-delimited benchmark items.
pub fn parse_benchmark(text: &str) -> Result<Vec<BenchmarkItem>, EvalError> {
    let items: Vec<BenchmarkItem> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|line| serde_json::from_str(line).map_err(|e| EvalError::BadRecord(e.to_string())))
        .collect::<Result<_, _>>()?;
    for item in &items {
        if item.gold.is_empty() {
            return Err(EvalError::BadRecord(format!(
                "item {} has no gold answers",
                item.id
            )));
        }
    }
    Ok(items)
}

/// Light normalization for choice matching: lowercase, punctuation to
/// spaces, collapsed whitespace. Unlike answer normalization this keeps
/// leading articles, so the label "A" survives.
fn light_norm(text: &str) -> String {
    let lowered = text.to_lowercase();
    let cleaned: String = lowered
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn choice_label(index: usize) -> String {
    char::from(b'A' + (index % 26) as u8).to_string()
}

/// Map a prediction to a choice index: label first (A, B, …), then choice
/// text, then label + text.
fn extract_choice(pred: &str, choices: &[String]) -> Option<usize> {
    let p = light_norm(pred);
    for (i, _) in choices.iter().enumerate() {
        if p == light_norm(&choice_label(i)) {
            return Some(i);
        }
    }
    for (i, choice) in choices.iter().enumerate() {
        if p == light_norm(choice) || p == normalize_answer(choice) {
            return Some(i);
        }
    }
    for (i, choice) in choices.iter().enumerate() {
        let labeled = format!("{} {}", light_norm(&choice_label(i)), light_norm(choice));
        if p == labeled {
            return Some(i);
        }
    }
    None
}

/// 1 iff the prediction selects the gold choice, matched first against
/// labels, then full choice text.
pub fn accuracy(pred: &str, choices: &[String], gold_choice: &str) -> Result<bool, EvalError> {
    let gold_index = choices
        .iter()
        .position(|c| c == gold_choice)
        .ok_or_else(|| EvalError::GoldNotInChoices(gold_choice.to_string()))?;
    Ok(extract_choice(pred, choices) == Some(gold_index))
}

/// 1 iff any normalized gold answer is a substring of the normalized
/// prediction.
pub fn match_score(pred: &str, golds: &[String]) -> bool {
    let p = normalize_answer(pred);
    golds.iter().any(|g| {
        let g = normalize_answer(g);
        !g.is_empty() && p.contains(&g)
    })
}

/// Token-overlap F1 with multiplicity. Tokens come from the light
/// normalizer: articles count as tokens here ("the cat sat" has three),
/// unlike the substring metric's answer normalization.
pub fn f1(pred: &str, gold: &str) -> f64 {
    let tokens = |s: &str| -> Vec<String> {
        light_norm(s).split_whitespace().map(str::to_string).collect()
    };
    let pred_tokens = tokens(pred);
    let gold_tokens = tokens(gold);
    if pred_tokens.is_empty() || gold_tokens.is_empty() {
        return 0.0;
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *gold_counts.entry(t).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for t in &pred_tokens {
        if let Some(count) = gold_counts.get_mut(t.as_str()) {
            if *count > 0 {
                *count -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred_tokens.len() as f64;
    let recall = common as f64 / gold_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Metric score in [0, 1] for one prediction against an item.
fn score_prediction(
    metric: EvalMetric,
    pred: &str,
    item: &BenchmarkItem,
) -> Result<f64, EvalError> {
    match metric {
        EvalMetric::Accuracy => {
            let choices = item.choices.as_deref().unwrap_or(&[]);
            let gold = item.gold.first().map(String::as_str).unwrap_or_default();
            Ok(if accuracy(pred, choices, gold)? { 1.0 } else { 0.0 })
        }
        EvalMetric::Match => Ok(if match_score(pred, &item.gold) { 1.0 } else { 0.0 }),
        EvalMetric::F1 => Ok(item.gold.iter().map(|g| f1(pred, g)).fold(0.0, f64::max)),
    }
}

/// Per-item outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemReport {
    pub id: String,
    /// The configured strategy's answer.
    pub chosen: String,
    /// Answer chosen by each strategy.
    pub strategy_answers: BTreeMap<String, String>,
    /// Metric score in [0, 1] per strategy.
    pub strategy_scores: BTreeMap<String, f64>,
    /// Upper bound contribution in [0, 1]: best metric score any
    /// trajectory reaches.
    pub upper_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Aggregated benchmark result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub per_item: Vec<ItemReport>,
    /// Mean metric score per strategy, on a 0–100 scale.
    pub strategy_scores: BTreeMap<String, f64>,
    pub upper_bound_score: f64,
    pub config_hash: String,
}

impl Report {
    /// Deterministic JSON rendering; identical inputs give identical bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Small human-readable summary table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<14} {:>7}\n", "strategy", "score"));
        for (name, score) in &self.strategy_scores {
            out.push_str(&format!("{name:<14} {score:>7.1}\n"));
        }
        out.push_str(&format!(
            "{:<14} {:>7.1}\n",
            "upper_bound", self.upper_bound_score
        ));
        out
    }
}

const STRATEGIES: [SelectionStrategy; 3] = [
    SelectionStrategy::Ppl,
    SelectionStrategy::Confidence,
    SelectionStrategy::Ensemble,
];

fn strategy_answer(strategy: SelectionStrategy, scored: &[ScoredTrajectory]) -> Option<String> {
    match strategy {
        SelectionStrategy::Ppl => selection::select_ppl(scored)
            .ok()
            .map(|t| t.trajectory.final_answer.clone()),
        SelectionStrategy::Confidence => selection::select_confidence(scored)
            .ok()
            .map(|t| t.trajectory.final_answer.clone()),
        SelectionStrategy::Ensemble => selection::select_ensemble_trajectory(
            scored,
            EnsembleDomain::default(),
            GroupKey::default(),
        )
        .ok()
        .map(|t| t.trajectory.final_answer.clone()),
    }
}

fn failed_item(item: &BenchmarkItem, error: String) -> ItemReport {
    let mut strategy_scores = BTreeMap::new();
    let mut strategy_answers = BTreeMap::new();
    for s in STRATEGIES {
        strategy_scores.insert(s.to_string(), 0.0);
        strategy_answers.insert(s.to_string(), String::new());
    }
    ItemReport {
        id: item.id.clone(),
        chosen: String::new(),
        strategy_answers,
        strategy_scores,
        upper_bound: 0.0,
        error: Some(error),
    }
}

fn evaluate_item(
    item: &BenchmarkItem,
    config: &SearchConfig,
    generator: &dyn Generator,
    provider: &dyn RetrieverProvider,
    metric: EvalMetric,
) -> ItemReport {
    let retriever = match provider.retriever_for(item.candidates.as_deref()) {
        Ok(r) => r,
        Err(e) => return failed_item(item, e.to_string()),
    };
    let trajectories = match engine::run(&item.question, config, generator, retriever.as_ref()) {
        Ok(t) => t,
        Err(e) => return failed_item(item, e.to_string()),
    };
    let scored: Vec<ScoredTrajectory> = trajectories
        .into_iter()
        .filter_map(|t| match ScoredTrajectory::score(t) {
            Ok(s) => Some(s),
            Err(error) => {
                tracing::warn!(%error, "trajectory not scorable; excluded from selection");
                None
            }
        })
        .collect();
    if scored.is_empty() {
        return failed_item(item, "no scorable trajectory".into());
    }

    let mut strategy_answers = BTreeMap::new();
    let mut strategy_scores = BTreeMap::new();
    for s in STRATEGIES {
        let answer = strategy_answer(s, &scored).unwrap_or_default();
        let score = score_prediction(metric, &answer, item).unwrap_or(0.0);
        strategy_answers.insert(s.to_string(), answer);
        strategy_scores.insert(s.to_string(), score);
    }
    // Upper bound: the best any single trajectory achieves on this item.
    let upper_bound = scored
        .iter()
        .map(|t| score_prediction(metric, &t.trajectory.final_answer, item).unwrap_or(0.0))
        .fold(0.0, f64::max);

    let chosen = strategy_answers
        .get(&config.strategy.to_string())
        .cloned()
        .unwrap_or_default();
    ItemReport {
        id: item.id.clone(),
        chosen,
        strategy_answers,
        strategy_scores,
        upper_bound,
        error: None,
    }
}

/// Run the tree search once per item and evaluate all three strategies plus
/// the upper bound on the same trajectory set. Items may be evaluated
/// concurrently; the per-item list keeps input order.
pub fn run_benchmark(
    items: &[BenchmarkItem],
    config: &SearchConfig,
    generator: &dyn Generator,
    provider: &dyn RetrieverProvider,
    metric: EvalMetric,
) -> Result<Report, EvalError> {
    if items.is_empty() {
        return Err(EvalError::NoItems);
    }
    let per_item = crate::par::map_ordered(items, config.parallel, |item| {
        evaluate_item(item, config, generator, provider, metric)
    });

    let n = per_item.len() as f64;
    let mut strategy_scores = BTreeMap::new();
    for s in STRATEGIES {
        let name = s.to_string();
        let total: f64 = per_item
            .iter()
            .map(|r| r.strategy_scores.get(&name).copied().unwrap_or(0.0))
            .sum();
        strategy_scores.insert(name, 100.0 * total / n);
    }
    let upper_bound_score = 100.0 * per_item.iter().map(|r| r.upper_bound).sum::<f64>() / n;

    let config_fingerprint = serde_json::to_string(&(config, metric)).expect("config serializes");
    Ok(Report {
        per_item,
        strategy_scores,
        upper_bound_score,
        config_hash: crate::util::sha256_hex(config_fingerprint.as_bytes()),
    })
}

/// Source-resilience summary: mean of per-source means and their sample
/// standard deviation (rounded to one decimal in the rendered table only).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResilienceReport {
    pub per_source_means: Vec<(String, f64)>,
    pub avg: f64,
    pub var: f64,
    pub table: String,
}

/// Compare per-task scores across retrieval sources.
pub fn source_resilience(rows: &[(String, Vec<f64>)]) -> Result<ResilienceReport, EvalError> {
    if rows.len() < 2 {
        return Err(EvalError::RaggedRows(format!(
            "need at least 2 sources, got {}",
            rows.len()
        )));
    }
    let width = rows[0].1.len();
    if width == 0 {
        return Err(EvalError::RaggedRows("sources carry no task scores".into()));
    }
    for (source, scores) in rows {
        if scores.len() != width {
            return Err(EvalError::RaggedRows(format!(
                "source {source} has {} scores, expected {width}",
                scores.len()
            )));
        }
    }

    let per_source_means: Vec<(String, f64)> = rows
        .iter()
        .map(|(source, scores)| {
            (
                source.clone(),
                scores.iter().sum::<f64>() / scores.len() as f64,
            )
        })
        .collect();
    let n = per_source_means.len() as f64;
    let avg = per_source_means.iter().map(|(_, m)| m).sum::<f64>() / n;
    let var = (per_source_means
        .iter()
        .map(|(_, m)| (m - avg).powi(2))
        .sum::<f64>()
        / (n - 1.0))
        .sqrt();

    let mut table = String::new();
    table.push_str(&format!("{:<16}", "source"));
    for i in 1..=width {
        table.push_str(&format!(" {:>8}", format!("task{i}")));
    }
    table.push_str(&format!(" {:>8}\n", "mean"));
    for ((source, scores), (_, mean)) in rows.iter().zip(&per_source_means) {
        table.push_str(&format!("{source:<16}"));
        for s in scores {
            table.push_str(&format!(" {s:>8.1}"));
        }
        table.push_str(&format!(" {mean:>8.1}\n"));
    }
    table.push_str(&format!("AVG {avg:>8.1}\nVAR {var:>8.1}\n"));

    Ok(ResilienceReport {
        per_source_means,
        avg,
        var,
        table,
    })
}
