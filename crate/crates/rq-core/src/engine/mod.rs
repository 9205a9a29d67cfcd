//! Tree-decoding search.
//!
//! At each node the generator chooses an action: a refinement action
//! (rewrite / decompose / disambiguate) retrieves documents for the refined
//! query and deepens the tree; an answer action terminates the trajectory.
//! Leaves that reach the depth limit mid-refinement get one final
//! generation with the answer token forced into the prompt, so every
//! surviving path yields a scorable trajectory.
//!
//! Sibling expansions may run concurrently; children are merged in
//! generator output order regardless of completion order, so a run is
//! reproducible across serial and parallel execution.

mod dump;

pub use dump::{dump_trajectories, StepRecord, TrajectoryRecord};

use crate::gateway::{Completion, ConcurrencyMode, DecodeParams, GatewayError, Generator};
use crate::protocol::{
    parse_continuation, parse_forced_answer, render_prefix, ContinuationAction, ProtocolError,
    SearchStep, TokenTable, Trajectory,
};
use crate::retrieval::Retriever;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Which retrieval backend a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchSource {
    Bm25Corpus,
    EmbeddingCandidates,
    WebSearch,
}

/// Which selection strategy picks the final answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    Ppl,
    Confidence,
    Ensemble,
}

impl std::fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SelectionStrategy::Ppl => "ppl",
            SelectionStrategy::Confidence => "confidence",
            SelectionStrategy::Ensemble => "ensemble",
        };
        f.write_str(s)
    }
}

/// Tree-search controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Branches requested per expansion.
    pub width: usize,
    /// Maximum number of refinement turns.
    pub max_depth: usize,
    /// Documents retrieved per step.
    pub top_k: usize,
    pub source: SearchSource,
    pub strategy: SelectionStrategy,
    pub decode: DecodeParams,
    /// Control-token surface forms.
    pub tokens: TokenTable,
    /// Hard cap on generator calls per run; a branch that would exceed it
    /// is abandoned, the run continues. Defaults to the full-tree bound.
    pub max_generator_calls: Option<usize>,
    /// Expand sibling branches concurrently (when the build has the
    /// parallel feature).
    pub parallel: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            width: 2,
            max_depth: 2,
            top_k: 3,
            source: SearchSource::Bm25Corpus,
            strategy: SelectionStrategy::Ensemble,
            decode: DecodeParams::default(),
            tokens: TokenTable::default(),
            max_generator_calls: None,
            parallel: true,
        }
    }
}

impl SearchConfig {
    /// Generator calls a full tree could make: every internal expansion
    /// plus one forced call per deepest leaf.
    pub fn call_budget(&self) -> usize {
        match self.max_generator_calls {
            Some(limit) => limit,
            None => {
                let w = self.width.max(1);
                let d = self.max_depth as u32;
                let internal: usize = if w == 1 {
                    self.max_depth
                } else {
                    (w.saturating_pow(d + 1).saturating_sub(1)) / (w - 1)
                };
                internal.saturating_add(w.saturating_pow(d)).max(1)
            }
        }
    }
}

/// One node of the decoding tree: a trajectory prefix plus bookkeeping.
#[derive(Debug, Clone)]
pub struct TreeNode {
    pub partial: Trajectory,
    /// Number of refinement steps taken so far.
    pub depth: usize,
    pub children: Vec<TreeNode>,
    pub terminal: bool,
}

impl TreeNode {
    pub fn root(question: impl Into<String>) -> Self {
        Self {
            partial: Trajectory {
                input: question.into(),
                ..Trajectory::default()
            },
            depth: 0,
            children: Vec::new(),
            terminal: false,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum EngineError {
    #[error("question must be non-empty")]
    EmptyQuestion,
    #[error("every branch failed; no trajectory completed")]
    NoTrajectory,
    #[error(transparent)]
    Generator(#[from] GatewayError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("node is terminal or at max depth; cannot expand")]
    NotExpandable,
    #[error("generator call budget exhausted")]
    BudgetExhausted,
}

/// Serializes calls to backends that declare themselves serialized and
/// enforces the per-run call budget.
struct GeneratorHandle<'a> {
    generator: &'a dyn Generator,
    queue: Option<Mutex<()>>,
    calls_left: AtomicUsize,
}

impl<'a> GeneratorHandle<'a> {
    fn new(generator: &'a dyn Generator, budget: usize) -> Self {
        let queue = match generator.concurrency() {
            ConcurrencyMode::Serialized => Some(Mutex::new(())),
            ConcurrencyMode::Concurrent => None,
        };
        Self {
            generator,
            queue,
            calls_left: AtomicUsize::new(budget),
        }
    }

    fn consume_call(&self) -> Result<(), EngineError> {
        self.calls_left
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |left| {
                left.checked_sub(1)
            })
            .map(|_| ())
            .map_err(|_| EngineError::BudgetExhausted)
    }

    fn complete(&self, prompt: &str, params: &DecodeParams) -> Result<Completion, EngineError> {
        self.consume_call()?;
        let _queued = self.queue.as_ref().map(|m| m.lock().unwrap());
        Ok(self.generator.complete(prompt, params)?)
    }

    fn complete_many(
        &self,
        prompt: &str,
        params: &DecodeParams,
        n: usize,
    ) -> Result<Vec<Completion>, EngineError> {
        self.consume_call()?;
        let _queued = self.queue.as_ref().map(|m| m.lock().unwrap());
        Ok(self.generator.complete_many(prompt, params, n)?)
    }
}

/// Expand one node: request `width` continuations, parse each into an
/// action, retrieve for refinement actions, and return the children in
/// generator output order. Exact-duplicate continuations are collapsed;
/// unparseable continuations and failed retrievals drop their child.
pub fn expand(
    node: &TreeNode,
    config: &SearchConfig,
    generator: &dyn Generator,
    retriever: &dyn Retriever,
) -> Result<Vec<TreeNode>, EngineError> {
    let handle = GeneratorHandle::new(generator, usize::MAX);
    expand_with(&handle, node, config, retriever)
}

fn expand_with(
    handle: &GeneratorHandle<'_>,
    node: &TreeNode,
    config: &SearchConfig,
    retriever: &dyn Retriever,
) -> Result<Vec<TreeNode>, EngineError> {
    if node.terminal || node.depth >= config.max_depth {
        return Err(EngineError::NotExpandable);
    }
    let prompt = render_prefix(&node.partial, &config.tokens)?;
    let completions = handle.complete_many(&prompt, &config.decode, config.width)?;

    let mut seen: Vec<&str> = Vec::new();
    let mut children = Vec::new();
    for completion in &completions {
        if seen.contains(&completion.text.as_str()) {
            continue;
        }
        seen.push(&completion.text);

        let action = match parse_continuation(&completion.text, &config.tokens) {
            Ok(action) => action,
            Err(error) => {
                tracing::warn!(%error, text = %completion.text, "dropping unparseable continuation");
                continue;
            }
        };
        match action {
            ContinuationAction::Answer {
                text,
                payload_offset,
                payload_len,
            } => {
                let partial = attach_answer(
                    node.partial.clone(),
                    completion,
                    text,
                    payload_offset,
                    payload_len,
                );
                children.push(TreeNode {
                    partial,
                    depth: node.depth,
                    children: Vec::new(),
                    terminal: true,
                });
            }
            ContinuationAction::Refine { action, query } => {
                let documents = match retriever.retrieve(&query, config.top_k) {
                    Ok(docs) => docs,
                    Err(error) => {
                        tracing::warn!(%error, %query, "retrieval failed; branch excluded");
                        continue;
                    }
                };
                let mut partial = node.partial.clone();
                append_tokens(&mut partial, completion, None);
                partial.steps.push(SearchStep {
                    turn: node.depth + 1,
                    action,
                    refined_query: query,
                    documents,
                });
                children.push(TreeNode {
                    partial,
                    depth: node.depth + 1,
                    children: Vec::new(),
                    terminal: false,
                });
            }
        }
    }
    Ok(children)
}

/// One forced generation with the answer token already in the prompt.
fn force_answer(
    handle: &GeneratorHandle<'_>,
    node: &TreeNode,
    config: &SearchConfig,
) -> Result<Trajectory, EngineError> {
    let mut prompt = render_prefix(&node.partial, &config.tokens)?;
    prompt.push('\n');
    prompt.push_str(&config.tokens.answer);
    let completion = handle.complete(&prompt, &config.decode)?;
    match parse_forced_answer(&completion.text, &config.tokens)? {
        ContinuationAction::Answer {
            text,
            payload_offset,
            payload_len,
        } => Ok(attach_answer(
            node.partial.clone(),
            &completion,
            text,
            payload_offset,
            payload_len,
        )),
        ContinuationAction::Refine { .. } => Err(EngineError::Protocol(
            ProtocolError::MalformedSequence("forced answer produced a refinement".into()),
        )),
    }
}

/// Append a completion's scored tokens to the trajectory. With `payload` set
/// to the raw byte range of the answer text, tokens past the payload (the
/// end marker — a stop signal, not answer content) are dropped and
/// `answer_start` is placed at the first payload token.
fn append_tokens(partial: &mut Trajectory, completion: &Completion, payload: Option<(usize, usize)>) {
    let prefix = partial.generated_tokens.len();
    let mut pos = 0usize;
    let mut answer_local: Option<usize> = None;
    for (i, (token, lp)) in completion
        .tokens
        .iter()
        .zip(&completion.log_probs)
        .enumerate()
    {
        let end = pos + token.len();
        if let Some((offset, len)) = payload {
            if pos >= offset + len {
                break;
            }
            if end > offset && answer_local.is_none() {
                answer_local = Some(i);
            }
        }
        partial.generated_tokens.push((token.clone(), *lp));
        pos = end;
    }
    if payload.is_some() {
        partial.answer_start = prefix + answer_local.unwrap_or(partial.generated_tokens.len() - prefix);
    }
}

fn attach_answer(
    mut partial: Trajectory,
    completion: &Completion,
    text: String,
    payload_offset: usize,
    payload_len: usize,
) -> Trajectory {
    append_tokens(&mut partial, completion, Some((payload_offset, payload_len)));
    partial.final_answer = text;
    partial
}

/// Run the full tree search for one question and return every completed
/// trajectory, leftmost branch first.
///
/// A failed branch (unparseable continuation, retrieval error, exhausted
/// budget) is excluded; a generator failure at the root propagates.
pub fn run(
    question: &str,
    config: &SearchConfig,
    generator: &dyn Generator,
    retriever: &dyn Retriever,
) -> Result<Vec<Trajectory>, EngineError> {
    if question.is_empty() {
        return Err(EngineError::EmptyQuestion);
    }
    let handle = GeneratorHandle::new(generator, config.call_budget());
    let root = TreeNode::root(question);

    let trajectories = if config.max_depth == 0 {
        vec![force_answer(&handle, &root, config)?]
    } else {
        let children = expand_with(&handle, &root, config, retriever)?;
        descend_all(&handle, children, config, retriever)
    };

    if trajectories.is_empty() {
        return Err(EngineError::NoTrajectory);
    }
    debug_assert!(trajectories
        .iter()
        .all(|t| crate::protocol::validate(t, config).is_empty()));
    Ok(trajectories)
}

/// Depth-first descent; sibling subtrees may run in parallel but results
/// are concatenated in child order.
fn descend_all(
    handle: &GeneratorHandle<'_>,
    children: Vec<TreeNode>,
    config: &SearchConfig,
    retriever: &dyn Retriever,
) -> Vec<Trajectory> {
    let parallel = config.parallel;
    let results: Vec<Vec<Trajectory>> =
        crate::par::map_ordered(&children, parallel, |child| {
            descend(handle, child, config, retriever)
        });
    results.into_iter().flatten().collect()
}

fn descend(
    handle: &GeneratorHandle<'_>,
    node: &TreeNode,
    config: &SearchConfig,
    retriever: &dyn Retriever,
) -> Vec<Trajectory> {
    if node.terminal {
        return vec![node.partial.clone()];
    }
    if node.depth >= config.max_depth {
        return match force_answer(handle, node, config) {
            Ok(trajectory) => vec![trajectory],
            Err(error) => {
                tracing::warn!(%error, "forced answer failed; leaf dropped");
                Vec::new()
            }
        };
    }
    match expand_with(handle, node, config, retriever) {
        Ok(children) => descend_all(handle, children, config, retriever),
        Err(error) => {
            tracing::warn!(%error, depth = node.depth, "expansion failed; branch dropped");
            Vec::new()
        }
    }
}
