//! Trajectory scoring and final-answer selection.
//!
//! Three strategies over a set of completed trajectories, all computed from
//! the generator's own token log-probabilities (no external judge):
//!
//! - PPL: argmin of `exp(−(1/L)·Σ log p)` over each trajectory's generated
//!   tokens.
//! - Confidence: argmax of `Σ log p` over the final-answer span only.
//! - Ensemble: group trajectories by (normalized) answer and pick the
//!   answer with the greatest cumulative confidence mass.
//!
//! Plus the upper bound: an item counts as reachable if any trajectory's
//! answer is judged correct.

use crate::protocol::Trajectory;
use std::collections::HashMap;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum SelectionError {
    #[error("trajectory has no scored tokens in scope")]
    NoScoredTokens,
    #[error("trajectory has an empty answer span")]
    EmptyAnswerSpan,
    #[error("empty input")]
    EmptyInput,
}

/// Which tokens perplexity averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PplScope {
    /// Model-generated tokens only: action markers, refined queries, and
    /// the answer. Inserted evidence is excluded — it was retrieved, not
    /// generated.
    #[default]
    GeneratedOnly,
    /// Every scored token, including any evidence spans the caller chose
    /// to score.
    FullSequence,
}

/// How ensemble selection accumulates per-group confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnsembleDomain {
    /// Sum of `exp(confidence)` — sequence probabilities, so agreeing
    /// trajectories reinforce their shared answer.
    #[default]
    Probability,
    /// Literal sum of log-domain confidences. More agreeing trajectories
    /// make the sum more negative, penalizing agreement; kept behind this
    /// flag for comparison.
    LogSum,
}

/// Grouping key for ensemble selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupKey {
    #[default]
    Normalized,
    Raw,
}

/// Lowercase, strip punctuation, collapse whitespace, and drop leading
/// articles (a/an/the). Shared by ensemble grouping and the text metrics.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let cleaned: String = lowered
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let mut tokens: Vec<&str> = cleaned.split_whitespace().collect();
    while let Some(first) = tokens.first() {
        if matches!(*first, "a" | "an" | "the") {
            tokens.remove(0);
        } else {
            break;
        }
    }
    tokens.join(" ")
}

/// Tokens of the normalized answer, for the token-overlap metrics.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    normalize_answer(text)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn in_scope(trajectory: &Trajectory, index: usize, scope: PplScope) -> bool {
    match scope {
        PplScope::FullSequence => true,
        PplScope::GeneratedOnly => !trajectory
            .evidence_token_spans
            .iter()
            .any(|(start, end)| index >= *start && index < *end),
    }
}

/// `exp(−(1/L)·Σ log p)` over the trajectory's generated tokens.
pub fn perplexity(trajectory: &Trajectory) -> Result<f64, SelectionError> {
    perplexity_scoped(trajectory, PplScope::GeneratedOnly)
}

pub fn perplexity_scoped(trajectory: &Trajectory, scope: PplScope) -> Result<f64, SelectionError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (_, lp)) in trajectory.generated_tokens.iter().enumerate() {
        if in_scope(trajectory, i, scope) {
            sum += lp;
            count += 1;
        }
    }
    if count == 0 {
        return Err(SelectionError::NoScoredTokens);
    }
    Ok((-sum / count as f64).exp())
}

/// `Σ log p` over the answer span only, `answer_start..`.
pub fn confidence(trajectory: &Trajectory) -> Result<f64, SelectionError> {
    if trajectory.answer_start >= trajectory.generated_tokens.len() {
        return Err(SelectionError::EmptyAnswerSpan);
    }
    Ok(trajectory.answer_log_probs().sum())
}

/// Length-normalized variant: mean answer-span log-prob. Not part of the
/// confidence formula proper; available for length-bias experiments.
pub fn confidence_mean_per_token(trajectory: &Trajectory) -> Result<f64, SelectionError> {
    let span = trajectory.generated_tokens.len() - trajectory.answer_start.min(trajectory.generated_tokens.len());
    if span == 0 {
        return Err(SelectionError::EmptyAnswerSpan);
    }
    Ok(confidence(trajectory)? / span as f64)
}

/// `−Σ log p`: the sequence negative log-likelihood of a fixed target.
pub fn sequence_nll(per_token_log_probs: &[f64]) -> Result<f64, SelectionError> {
    if per_token_log_probs.is_empty() {
        return Err(SelectionError::EmptyInput);
    }
    Ok(-per_token_log_probs.iter().sum::<f64>())
}

/// A trajectory with its selection scores attached.
#[derive(Debug, Clone)]
pub struct ScoredTrajectory {
    pub trajectory: Trajectory,
    pub ppl: f64,
    pub confidence: f64,
    pub answer_norm: String,
}

impl ScoredTrajectory {
    pub fn score(trajectory: Trajectory) -> Result<Self, SelectionError> {
        let ppl = perplexity(&trajectory)?;
        let conf = confidence(&trajectory)?;
        let answer_norm = normalize_answer(&trajectory.final_answer);
        Ok(Self {
            trajectory,
            ppl,
            confidence: conf,
            answer_norm,
        })
    }
}

/// Lowest perplexity wins; ties go to the earliest position.
pub fn select_ppl(trajectories: &[ScoredTrajectory]) -> Result<&ScoredTrajectory, SelectionError> {
    trajectories
        .iter()
        .reduce(|best, t| if t.ppl < best.ppl { t } else { best })
        .ok_or(SelectionError::EmptyInput)
}

/// Highest answer-span confidence wins; ties go to the earliest position.
pub fn select_confidence(
    trajectories: &[ScoredTrajectory],
) -> Result<&ScoredTrajectory, SelectionError> {
    trajectories
        .iter()
        .reduce(|best, t| if t.confidence > best.confidence { t } else { best })
        .ok_or(SelectionError::EmptyInput)
}

/// Ensemble selection with the default probability-domain accumulation and
/// normalized grouping. Returns the winning group key.
pub fn select_ensemble(trajectories: &[ScoredTrajectory]) -> Result<String, SelectionError> {
    select_ensemble_with(trajectories, EnsembleDomain::default(), GroupKey::default())
}

/// Ensemble selection with explicit accumulation domain and grouping key.
/// Ties break toward the group whose first member appears earliest.
pub fn select_ensemble_with(
    trajectories: &[ScoredTrajectory],
    domain: EnsembleDomain,
    key: GroupKey,
) -> Result<String, SelectionError> {
    if trajectories.is_empty() {
        return Err(SelectionError::EmptyInput);
    }
    let key_of = |t: &ScoredTrajectory| -> String {
        match key {
            GroupKey::Normalized => t.answer_norm.clone(),
            GroupKey::Raw => t.trajectory.final_answer.clone(),
        }
    };

    // (first occurrence index, accumulated mass) per group.
    let mut groups: HashMap<String, (usize, f64)> = HashMap::new();
    let mut order: Vec<String> = Vec::new();
    for (i, t) in trajectories.iter().enumerate() {
        let k = key_of(t);
        let contribution = match domain {
            EnsembleDomain::Probability => t.confidence.exp(),
            EnsembleDomain::LogSum => t.confidence,
        };
        match groups.get_mut(&k) {
            Some((_, mass)) => *mass += contribution,
            None => {
                groups.insert(k.clone(), (i, contribution));
                order.push(k);
            }
        }
    }

    let mut best: Option<(&str, usize, f64)> = None;
    for k in &order {
        let (first, mass) = groups[k];
        let better = match best {
            None => true,
            Some((_, _, best_mass)) => mass > best_mass,
        };
        if better {
            best = Some((k, first, mass));
        }
    }
    Ok(best.expect("non-empty input").0.to_string())
}

/// First member of the winning ensemble group — the surface-form answer
/// behind the key [`select_ensemble_with`] returns.
pub fn select_ensemble_trajectory<'a>(
    trajectories: &'a [ScoredTrajectory],
    domain: EnsembleDomain,
    key: GroupKey,
) -> Result<&'a ScoredTrajectory, SelectionError> {
    let winner = select_ensemble_with(trajectories, domain, key)?;
    trajectories
        .iter()
        .find(|t| match key {
            GroupKey::Normalized => t.answer_norm == winner,
            GroupKey::Raw => t.trajectory.final_answer == winner,
        })
        .ok_or(SelectionError::EmptyInput)
}

/// True iff `metric` judges any trajectory's final answer correct against
/// the gold answers.
pub fn upper_bound<F>(
    trajectories: &[ScoredTrajectory],
    gold: &[String],
    metric: F,
) -> Result<bool, SelectionError>
where
    F: Fn(&str, &[String]) -> bool,
{
    if trajectories.is_empty() || gold.is_empty() {
        return Err(SelectionError::EmptyInput);
    }
    Ok(trajectories
        .iter()
        .any(|t| metric(&t.trajectory.final_answer, gold)))
}
