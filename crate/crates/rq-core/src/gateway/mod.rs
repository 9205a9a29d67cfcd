//! Generator gateway: the language model as a completion service.
//!
//! Everything downstream (tree decoding, dataset annotation, scoring) talks
//! to a [`Generator`], which returns text plus per-token log-probabilities.
//! Two implementations ship here: a deterministic [`ScriptedGenerator`] for
//! fixtures and tests, and an [`HttpGenerator`] speaking a small completion
//! wire contract for real models.

mod http;
mod scripted;
mod tokenize;

pub use http::HttpGenerator;
pub use scripted::{ScriptEntry, ScriptedCompletion, ScriptedGenerator};
pub use tokenize::split_tokens;

use serde::{Deserialize, Serialize};

/// Why generation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    /// A configured stop sequence was produced.
    #[serde(alias = "stop")]
    StopToken,
    /// The token budget ran out.
    #[serde(alias = "length")]
    MaxTokens,
    /// The model emitted its own end-of-sequence.
    #[serde(alias = "eos")]
    EndOfSequence,
}

/// One generator output.
///
/// `tokens` and `log_probs` are always the same length, and when token data
/// is present the tokens concatenate back to `text` exactly (tokens carry
/// their own leading whitespace). Every log-prob is ≤ 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub tokens: Vec<String>,
    pub log_probs: Vec<f64>,
    pub finish_reason: FinishReason,
}

impl Completion {
    /// Build a completion whose tokens all share one log-prob.
    pub fn uniform(text: impl Into<String>, log_prob: f64, finish_reason: FinishReason) -> Self {
        let text = text.into();
        let tokens = split_tokens(&text);
        let log_probs = vec![log_prob; tokens.len()];
        Self {
            text,
            tokens,
            log_probs,
            finish_reason,
        }
    }

    /// Check the type invariants; used to vet remote responses.
    pub fn check(&self) -> Result<(), GatewayError> {
        if self.tokens.len() != self.log_probs.len() {
            return Err(GatewayError::MalformedResponse(format!(
                "{} tokens but {} log-probs",
                self.tokens.len(),
                self.log_probs.len()
            )));
        }
        if let Some(bad) = self.log_probs.iter().find(|lp| **lp > 0.0) {
            return Err(GatewayError::MalformedResponse(format!(
                "positive log-prob {bad}"
            )));
        }
        if !self.tokens.is_empty() {
            let joined: String = self.tokens.concat();
            if joined != self.text {
                return Err(GatewayError::MalformedResponse(
                    "tokens do not concatenate to text".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Decoding controls passed with every completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub max_tokens: usize,
    pub temperature: f64,
    pub stop_sequences: Vec<String>,
    pub want_log_probs: bool,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            max_tokens: 256,
            // Branch diversification samples at a mild temperature; exact
            // duplicates are collapsed downstream.
            temperature: 0.7,
            stop_sequences: Vec::new(),
            want_log_probs: true,
        }
    }
}

/// Whether an implementation tolerates concurrent calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcurrencyMode {
    /// Safe to call from any number of threads.
    Concurrent,
    /// Callers must serialize requests; the engine queues them.
    Serialized,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum GatewayError {
    #[error("endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    /// The scripted generator was asked for something its script does not
    /// cover.
    #[error("script exhausted: {0}")]
    ScriptExhausted(String),
    /// The backend cannot score fixed targets.
    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

/// A completion service.
///
/// Implementations either tolerate concurrent calls or declare themselves
/// serialized via [`concurrency`](Generator::concurrency); the engine queues
/// requests to serialized backends.
pub trait Generator: Send + Sync {
    /// One continuation of `prompt`. Generation halts at any stop sequence,
    /// the token budget, or the model's own end.
    fn complete(&self, prompt: &str, params: &DecodeParams) -> Result<Completion, GatewayError>;

    /// Exactly `n` continuations. At temperature 0 duplicates are expected;
    /// the engine de-duplicates downstream.
    fn complete_many(
        &self,
        prompt: &str,
        params: &DecodeParams,
        n: usize,
    ) -> Result<Vec<Completion>, GatewayError>;

    /// Per-token log-probabilities of `target` under the model given
    /// `prompt`; the sum is the sequence log-likelihood.
    fn score_continuation(&self, prompt: &str, target: &str) -> Result<Vec<f64>, GatewayError>;

    fn concurrency(&self) -> ConcurrencyMode {
        ConcurrencyMode::Serialized
    }
}
