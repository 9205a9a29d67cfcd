//! Search-augmented training instance construction.
//!
//! The pipeline per raw instance: classify by source dataset, ask an
//! annotator service for refined queries (retrieval necessity first for
//! dialogue-style inputs), retrieve evidence per query, regenerate the
//! answer grounded on that evidence, and assemble the flat training record.
//! Per-instance failures never abort a build — the instance is marked
//! dropped with a reason and excluded from the output file.

mod annotate;
mod io;

pub use annotate::{
    annotate_refinements, regenerate_answer, AnnotationTemplates, ANNOTATION_PARAMS,
};
pub use io::{build_manifest, parse_pool, render_output, Manifest};

use crate::engine::SearchConfig;
use crate::gateway::{Generator, GatewayError};
use crate::protocol::{Document, RefinementAction, SearchStep, TokenTable, Trajectory};
use crate::retrieval::{RetrievalError, RetrieverProvider};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum DatasetError {
    #[error("unknown source dataset `{0}`")]
    UnknownSource(String),
    #[error("annotator refused")]
    AnnotatorRefusal,
    #[error("annotator format violation: {0}")]
    FormatViolation(String),
    #[error(transparent)]
    Annotator(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("bad pool record: {0}")]
    BadRecord(String),
}

/// Task category an instance belongs to, keyed by its source dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    MultiTurn,
    MultiHop,
    Ambiguous,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::MultiTurn => "multi_turn",
            Category::MultiHop => "multi_hop",
            Category::Ambiguous => "ambiguous",
        }
    }

    fn action(self) -> RefinementAction {
        match self {
            Category::MultiTurn => RefinementAction::Rewrite,
            Category::MultiHop => RefinementAction::Decompose,
            Category::Ambiguous => RefinementAction::Disambiguate,
        }
    }
}

/// One raw task-pool record, as read from the line-delimited input file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolRecord {
    pub id: String,
    pub source: String,
    pub input: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Document>>,
    /// Gold support document ids, when the source dataset marks them;
    /// drives the multi-hop alignment filter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<String>>,
}

/// A pool record after classification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawInstance {
    pub id: String,
    pub source: String,
    #[serde(rename = "input")]
    pub x_origin: String,
    #[serde(rename = "output")]
    pub y_origin: String,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Document>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerProvenance {
    /// The answer was regenerated grounded on retrieved contexts.
    Regenerated,
    /// The original dataset answer was kept (retention ablation).
    OriginalRetained,
}

/// One assembled training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentedInstance {
    pub raw: RawInstance,
    pub steps: Vec<SearchStep>,
    pub y_new: String,
    pub answer_provenance: AnswerProvenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropped_reason: Option<String>,
}

impl AugmentedInstance {
    pub fn is_dropped(&self) -> bool {
        self.dropped_reason.is_some()
    }

    /// The trajectory this instance trains toward.
    pub fn to_trajectory(&self) -> Trajectory {
        Trajectory {
            input: self.raw.x_origin.clone(),
            steps: self.steps.clone(),
            final_answer: self.y_new.clone(),
            ..Trajectory::default()
        }
    }
}

/// Build-time knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    /// Source dataset → category. Classification is a pure table lookup.
    pub source_mapping: BTreeMap<String, Category>,
    pub templates: AnnotationTemplates,
    /// Documents retrieved per refined query.
    pub top_k: usize,
    /// Cap on refinement turns for multi-hop instances.
    pub max_turns_multi_hop: usize,
    /// Cap on refinement turns for everything else.
    pub max_turns_default: usize,
    pub tokens: TokenTable,
    pub parallel: bool,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            source_mapping: default_source_mapping(),
            templates: AnnotationTemplates::default(),
            top_k: 3,
            max_turns_multi_hop: 3,
            max_turns_default: 1,
            tokens: TokenTable::default(),
            parallel: true,
        }
    }
}

/// Built-in source → category table. Multi-hop QA sets decompose,
/// ambiguous sets disambiguate, dialogue/instruction and single-hop QA
/// sets go through the rewrite path with its retrieval-necessity gate.
pub fn default_source_mapping() -> BTreeMap<String, Category> {
    let mut m = BTreeMap::new();
    for source in ["hotpotqa", "musique", "2wikimultihopqa"] {
        m.insert(source.to_string(), Category::MultiHop);
    }
    m.insert("asqa".to_string(), Category::Ambiguous);
    for source in [
        "multi_turn",
        "lima",
        "wizardlm",
        "open_orca",
        "openassistant",
        "gpt4_alpaca",
        "arc_easy",
        "arc_challenge",
        "openbookqa",
    ] {
        m.insert(source.to_string(), Category::MultiTurn);
    }
    m
}

/// Classify a pool record by its source-dataset tag.
pub fn classify(record: &PoolRecord, config: &BuildConfig) -> Result<RawInstance, DatasetError> {
    let category = config
        .source_mapping
        .get(&record.source.to_lowercase())
        .copied()
        .ok_or_else(|| DatasetError::UnknownSource(record.source.clone()))?;
    Ok(RawInstance {
        id: record.id.clone(),
        source: record.source.clone(),
        x_origin: record.input.clone(),
        y_origin: record.output.clone(),
        category,
        candidates: record.candidates.clone(),
        support: record.support.clone(),
    })
}

fn dropped(raw: RawInstance, reason: String) -> AugmentedInstance {
    AugmentedInstance {
        raw,
        steps: Vec::new(),
        y_new: String::new(),
        answer_provenance: AnswerProvenance::Regenerated,
        dropped_reason: Some(reason),
    }
}

/// Build one instance end to end. Never fails: every per-instance error
/// lands in `dropped_reason`.
pub fn build(
    record: &PoolRecord,
    config: &BuildConfig,
    annotator: &dyn Generator,
    provider: &dyn RetrieverProvider,
) -> AugmentedInstance {
    let raw = match classify(record, config) {
        Ok(raw) => raw,
        Err(e) => {
            return dropped(
                RawInstance {
                    id: record.id.clone(),
                    source: record.source.clone(),
                    x_origin: record.input.clone(),
                    y_origin: record.output.clone(),
                    category: Category::MultiTurn,
                    candidates: record.candidates.clone(),
                    support: record.support.clone(),
                },
                format!("classify: {e}"),
            )
        }
    };

    let (necessity, queries) = match annotate_refinements(&raw, annotator, &config.templates) {
        Ok(out) => out,
        Err(e) => return dropped(raw, annotate_drop_reason(&e)),
    };

    let cap = match raw.category {
        Category::MultiHop => config.max_turns_multi_hop,
        _ => config.max_turns_default,
    };
    let mut queries = queries;
    queries.truncate(cap);

    // Necessity affirmed but no rewrite offered: search with the original
    // question itself.
    if necessity && queries.is_empty() {
        queries.push((raw.category.action(), raw.x_origin.clone()));
    }

    let mut steps = Vec::new();
    if necessity {
        let retriever = match provider.retriever_for(raw.candidates.as_deref()) {
            Ok(r) => r,
            Err(e) => return dropped(raw, format!("retrieval: {e}")),
        };
        for (turn, (action, query)) in queries.into_iter().enumerate() {
            let documents = match retriever.retrieve(&query, config.top_k) {
                Ok(docs) => docs,
                Err(e) => return dropped(raw, format!("retrieval: {e}")),
            };
            steps.push(SearchStep {
                turn: turn + 1,
                action,
                refined_query: query,
                documents,
            });
        }
    }

    // Multi-hop alignment: every gold support document must surface in the
    // union of retrieved top-k sets, or the instance is discarded.
    if raw.category == Category::MultiHop {
        let missing = raw.support.iter().flatten().find(|wanted| {
            !steps
                .iter()
                .flat_map(|s| &s.documents)
                .any(|d| &&d.locator == wanted)
        });
        if let Some(wanted) = missing {
            let reason = format!("alignment: support document `{wanted}` not retrieved");
            return dropped(raw, reason);
        }
    }

    let y_new = match regenerate_answer(&raw, &steps, annotator, &config.templates) {
        Ok(answer) => answer,
        Err(e) => return dropped(raw, annotate_drop_reason(&e)),
    };
    if y_new.is_empty() {
        return dropped(raw, "regenerate: empty answer".into());
    }

    let instance = AugmentedInstance {
        raw,
        steps,
        y_new,
        answer_provenance: AnswerProvenance::Regenerated,
        dropped_reason: None,
    };

    // The assembled record must hold every protocol invariant.
    let check = SearchConfig {
        max_depth: cap,
        top_k: config.top_k,
        tokens: config.tokens.clone(),
        ..SearchConfig::default()
    };
    let violations = crate::protocol::validate(&instance.to_trajectory(), &check);
    if let Some(first) = violations.into_iter().next() {
        let raw = instance.raw;
        return dropped(raw, format!("invariant: {first}"));
    }
    instance
}

fn annotate_drop_reason(e: &DatasetError) -> String {
    match e {
        DatasetError::AnnotatorRefusal => "refusal".into(),
        DatasetError::FormatViolation(detail) => format!("format: {detail}"),
        other => format!("annotator: {other}"),
    }
}

/// Build a whole pool; instances may build concurrently, output keeps
/// input order.
pub fn build_pool(
    records: &[PoolRecord],
    config: &BuildConfig,
    annotator: &dyn Generator,
    provider: &dyn RetrieverProvider,
) -> Vec<AugmentedInstance> {
    crate::par::map_ordered(records, config.parallel, |record| {
        build(record, config, annotator, provider)
    })
}

/// Replace the regenerated answer with the original dataset answer on
/// exactly `floor(ratio·N)` instances, chosen by seeded uniform sampling
/// without replacement. Everything else is untouched.
pub fn apply_retention(
    instances: &[AugmentedInstance],
    ratio: f64,
    seed: u64,
) -> Vec<AugmentedInstance> {
    assert!((0.0..=1.0).contains(&ratio), "ratio must be in [0, 1]");
    let mut out = instances.to_vec();
    let n = out.len();
    let keep = (ratio * n as f64).floor() as usize;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, n, keep);
    for i in chosen {
        out[i].answer_provenance = AnswerProvenance::OriginalRetained;
        out[i].y_new = out[i].raw.y_origin.clone();
    }
    out
}

/// Token counts of the rendered trajectory per non-dropped instance.
pub fn token_counts<F>(instances: &[AugmentedInstance], tokens: &TokenTable, counter: F) -> Vec<usize>
where
    F: Fn(&str) -> usize,
{
    instances
        .iter()
        .filter(|i| !i.is_dropped())
        .map(|i| {
            let rendered = crate::protocol::render(&i.to_trajectory(), tokens)
                .unwrap_or_default();
            counter(&rendered)
        })
        .collect()
}

/// Histogram over instance lengths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: usize,
    /// Bin start (inclusive) → count.
    pub bins: BTreeMap<usize, usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.bins.values().sum()
    }
}

/// Length histogram of the rendered instances under `counter`.
pub fn token_stats<F>(
    instances: &[AugmentedInstance],
    tokens: &TokenTable,
    counter: F,
    bin_width: usize,
) -> Histogram
where
    F: Fn(&str) -> usize,
{
    let bin_width = bin_width.max(1);
    let mut bins = BTreeMap::new();
    for count in token_counts(instances, tokens, counter) {
        let bin = (count / bin_width) * bin_width;
        *bins.entry(bin).or_insert(0) += 1;
    }
    Histogram { bin_width, bins }
}

/// Whitespace token counter, the default for length statistics.
pub fn whitespace_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, source: &str) -> PoolRecord {
        PoolRecord {
            id: id.into(),
            source: source.into(),
            input: format!("question for {id}"),
            output: format!("original answer {id}"),
            candidates: None,
            support: None,
        }
    }

    #[test]
    fn classify_by_source_table() {
        let config = BuildConfig::default();
        assert_eq!(
            classify(&record("a", "hotpotqa"), &config).unwrap().category,
            Category::MultiHop
        );
        assert_eq!(
            classify(&record("b", "ASQA"), &config).unwrap().category,
            Category::Ambiguous
        );
        assert_eq!(
            classify(&record("c", "lima"), &config).unwrap().category,
            Category::MultiTurn
        );
        assert_eq!(
            classify(&record("d", "mystery_set"), &config).unwrap_err(),
            DatasetError::UnknownSource("mystery_set".into())
        );
    }

    fn augmented(id: &str) -> AugmentedInstance {
        AugmentedInstance {
            raw: RawInstance {
                id: id.into(),
                source: "lima".into(),
                x_origin: format!("q {id}"),
                y_origin: format!("orig {id}"),
                category: Category::MultiTurn,
                candidates: None,
                support: None,
            },
            steps: vec![],
            y_new: format!("new {id}"),
            answer_provenance: AnswerProvenance::Regenerated,
            dropped_reason: None,
        }
    }

    #[test]
    fn retention_flips_exactly_floor_ratio_n() {
        let instances: Vec<AugmentedInstance> =
            (0..10).map(|i| augmented(&i.to_string())).collect();
        for (ratio, expect) in [(0.0, 0usize), (0.25, 2), (0.5, 5), (0.75, 7), (1.0, 10)] {
            let out = apply_retention(&instances, ratio, 42);
            let retained = out
                .iter()
                .filter(|i| i.answer_provenance == AnswerProvenance::OriginalRetained)
                .count();
            assert_eq!(retained, expect, "ratio {ratio}");
            for i in &out {
                match i.answer_provenance {
                    AnswerProvenance::OriginalRetained => assert_eq!(i.y_new, i.raw.y_origin),
                    AnswerProvenance::Regenerated => assert!(i.y_new.starts_with("new ")),
                }
            }
        }
    }

    #[test]
    fn retention_is_seed_reproducible_and_touches_nothing_else() {
        let instances: Vec<AugmentedInstance> =
            (0..10).map(|i| augmented(&i.to_string())).collect();
        let a = apply_retention(&instances, 0.5, 7);
        let b = apply_retention(&instances, 0.5, 7);
        let a_json = serde_json::to_string(&a).unwrap();
        assert_eq!(a_json, serde_json::to_string(&b).unwrap());

        // Field-level diff: only provenance and y_new may change.
        for (before, after) in instances.iter().zip(&a) {
            assert_eq!(
                serde_json::to_string(&before.raw).unwrap(),
                serde_json::to_string(&after.raw).unwrap()
            );
            assert_eq!(before.steps.len(), after.steps.len());
            if after.answer_provenance == AnswerProvenance::Regenerated {
                assert_eq!(before.y_new, after.y_new);
            }
        }
    }

    #[test]
    fn token_stats_histogram() {
        let instances: Vec<AugmentedInstance> = (0..3).map(|i| augmented(&i.to_string())).collect();
        let empty = token_stats(&[], &TokenTable::default(), whitespace_count, 10);
        assert!(empty.bins.is_empty());
        let hist = token_stats(&instances, &TokenTable::default(), whitespace_count, 5);
        assert_eq!(hist.total(), 3);
    }
}
