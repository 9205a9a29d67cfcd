//! Control-token protocol: the grammar that turns a structured refinement
//! trajectory into one flat token sequence and back.
//!
//! A serialized trajectory is the original input, followed by one block per
//! refinement step (action token, refined query, an evidence block holding
//! the retrieved documents), and finally the answer token, the answer text,
//! and the end token:
//!
//! ```text
//! {input}
//! [S_DECOMPOSE] {refined query}
//! [R_EVIDENCE]
//! Title: {title}
//! Snippet: {snippet}
//! Source: {locator}
//! Score: {score}
//! ---
//! Title: ...
//! [/R_EVIDENCE]
//! [A_RESPONSE] {answer}
//! [EOS]
//! ```
//!
//! Payload text is escaped so that control tokens and structural newlines
//! can never be forged from inside a query, snippet, or answer. Rendering is
//! deterministic and injective; [`parse`] is its exact inverse on everything
//! except per-token log-probabilities, which serialized text does not carry.

mod parse;
mod render;
mod tokens;

pub use parse::{parse, parse_continuation, parse_forced_answer, ContinuationAction};
pub use render::{render, render_prefix};
pub use tokens::{escape, unescape, ControlToken, TokenTable};

use serde::{Deserialize, Serialize};

/// What the generator decided to do at one node of the decoding tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementAction {
    /// Rephrase the query for clarity before searching.
    Rewrite,
    /// Split a multi-hop question into an answerable sub-query.
    Decompose,
    /// Resolve an ambiguous query to one concrete reading.
    Disambiguate,
    /// Stop refining and produce the final answer. Terminal: a
    /// [`SearchStep`] may never carry this kind.
    Answer,
}

impl RefinementAction {
    pub fn is_terminal(self) -> bool {
        matches!(self, RefinementAction::Answer)
    }
}

impl std::fmt::Display for RefinementAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RefinementAction::Rewrite => "rewrite",
            RefinementAction::Decompose => "decompose",
            RefinementAction::Disambiguate => "disambiguate",
            RefinementAction::Answer => "answer",
        };
        f.write_str(s)
    }
}

/// One retrieved piece of evidence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub title: String,
    /// Preview text. Must be non-empty.
    pub snippet: String,
    /// URL or corpus document id.
    pub locator: String,
    /// 1-based position within its retrieval result list.
    pub rank: usize,
    /// Retrieval score; units depend on the backend.
    pub score: f64,
}

impl Document {
    pub fn new(
        title: impl Into<String>,
        snippet: impl Into<String>,
        locator: impl Into<String>,
        rank: usize,
        score: f64,
    ) -> Self {
        Self {
            title: title.into(),
            snippet: snippet.into(),
            locator: locator.into(),
            rank,
            score,
        }
    }

    /// Field-level equality with scores compared bit-for-bit.
    pub fn structurally_eq(&self, other: &Document) -> bool {
        self.title == other.title
            && self.snippet == other.snippet
            && self.locator == other.locator
            && self.rank == other.rank
            && self.score.to_bits() == other.score.to_bits()
    }
}

/// One refinement turn: a non-terminal action, the refined query it
/// produced, and the documents retrieved for that query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchStep {
    /// 1-based turn number; turns are consecutive within a trajectory.
    pub turn: usize,
    pub action: RefinementAction,
    pub refined_query: String,
    /// Ordered by rank; ranks run 1..=len.
    pub documents: Vec<Document>,
}

impl SearchStep {
    pub fn new(
        turn: usize,
        action: RefinementAction,
        refined_query: impl Into<String>,
        documents: Vec<Document>,
    ) -> Self {
        Self {
            turn,
            action,
            refined_query: refined_query.into(),
            documents,
        }
    }

    pub fn structurally_eq(&self, other: &SearchStep) -> bool {
        self.turn == other.turn
            && self.action == other.action
            && self.refined_query == other.refined_query
            && self.documents.len() == other.documents.len()
            && self
                .documents
                .iter()
                .zip(&other.documents)
                .all(|(a, b)| a.structurally_eq(b))
    }
}

/// One complete root-to-leaf decoding path.
///
/// `generated_tokens` holds the model-generated tokens of the path (action
/// markers, refined queries, the final answer) with their log-probabilities;
/// retrieved document text is inserted into the sequence, not generated, so
/// it carries no tokens here. `answer_start` is the index of the first token
/// of the final answer.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub input: String,
    pub steps: Vec<SearchStep>,
    pub final_answer: String,
    pub generated_tokens: Vec<(String, f64)>,
    pub answer_start: usize,
    /// Ranges of `generated_tokens` that hold scored evidence text, if the
    /// caller chose to score inserted documents. Empty in normal operation;
    /// perplexity excludes these ranges unless full-sequence scope is on.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence_token_spans: Vec<(usize, usize)>,
}

impl Trajectory {
    /// A trajectory with no steps and no scored tokens.
    pub fn bare(input: impl Into<String>, final_answer: impl Into<String>) -> Self {
        Self {
            input: input.into(),
            final_answer: final_answer.into(),
            ..Self::default()
        }
    }

    /// Structural identity: everything the serialized form carries. Token
    /// log-prob data (`generated_tokens`, `answer_start`, evidence spans)
    /// is ignored.
    pub fn structurally_eq(&self, other: &Trajectory) -> bool {
        self.input == other.input
            && self.final_answer == other.final_answer
            && self.steps.len() == other.steps.len()
            && self
                .steps
                .iter()
                .zip(&other.steps)
                .all(|(a, b)| a.structurally_eq(b))
    }

    /// Log-probs of the answer span, `answer_start..`.
    pub fn answer_log_probs(&self) -> impl Iterator<Item = f64> + '_ {
        self.generated_tokens
            .iter()
            .skip(self.answer_start)
            .map(|(_, lp)| *lp)
    }
}

/// Errors raised by [`render`], [`parse`], and [`parse_continuation`].
#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ProtocolError {
    /// A trajectory handed to `render` breaks a type invariant.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    /// Something shaped like a control token that the token table does not
    /// recognize.
    #[error("unknown control token `{0}`")]
    UnknownToken(String),
    /// An evidence-open token with no matching close before the next
    /// control token or end of input.
    #[error("evidence block opened but never closed")]
    UnterminatedEvidence,
    /// The end token appeared before any answer token.
    #[error("end token before answer token")]
    MissingAnswer,
    /// Input ran out before the answer/end tokens completed the sequence.
    #[error("serialized trajectory ends before the end token")]
    MissingEnd,
    /// A document block inside an evidence section does not follow the
    /// Title/Snippet/Source/Score line layout.
    #[error("malformed evidence block: {0}")]
    MalformedEvidence(String),
    /// Control tokens in an order the grammar does not allow.
    #[error("malformed token sequence: {0}")]
    MalformedSequence(String),
}

/// Check every type invariant plus the configured depth and top-k bounds.
///
/// Returns human-readable violation descriptions; empty means valid.
pub fn validate(trajectory: &Trajectory, config: &crate::engine::SearchConfig) -> Vec<String> {
    let mut violations = structural_violations(trajectory);

    if trajectory.steps.len() > config.max_depth {
        violations.push(format!(
            "depth {} exceeds configured max depth {}",
            trajectory.steps.len(),
            config.max_depth
        ));
    }
    for step in &trajectory.steps {
        if step.documents.len() > config.top_k {
            violations.push(format!(
                "step {} has {} documents, exceeding top-k {}",
                step.turn,
                step.documents.len(),
                config.top_k
            ));
        }
    }
    if trajectory.answer_start > trajectory.generated_tokens.len() {
        violations.push(format!(
            "answer_start {} past end of {} generated tokens",
            trajectory.answer_start,
            trajectory.generated_tokens.len()
        ));
    }
    for (i, (_, lp)) in trajectory.generated_tokens.iter().enumerate() {
        if *lp > 0.0 {
            violations.push(format!("generated token {i} has positive log-prob {lp}"));
        }
    }
    violations
}

/// The invariants of the step/document structure alone (no config bounds).
pub(crate) fn structural_violations(trajectory: &Trajectory) -> Vec<String> {
    let mut violations = Vec::new();
    for (i, step) in trajectory.steps.iter().enumerate() {
        if step.action.is_terminal() {
            violations.push(format!("step {} carries terminal kind Answer", i + 1));
        }
        if step.refined_query.is_empty() {
            violations.push(format!("step {} has an empty refined query", i + 1));
        }
        if step.turn != i + 1 {
            violations.push(format!(
                "step turn {} out of sequence (expected {})",
                step.turn,
                i + 1
            ));
        }
        for (j, doc) in step.documents.iter().enumerate() {
            if doc.rank != j + 1 {
                violations.push(format!(
                    "step {} document rank {} out of sequence (expected {})",
                    i + 1,
                    doc.rank,
                    j + 1
                ));
            }
            if doc.snippet.is_empty() {
                violations.push(format!("step {} document {} has an empty snippet", i + 1, j + 1));
            }
        }
    }
    violations
}
