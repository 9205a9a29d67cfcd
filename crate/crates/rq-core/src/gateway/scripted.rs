//! Deterministic scripted generator for fixtures and tests.
//!
//! A script is an ordered list of entries, each a prompt pattern plus the
//! continuations to return for prompts matching it. Matching is stateless —
//! the same prompt always yields the same continuations — so replays are
//! byte-identical regardless of call interleaving.

use super::tokenize::split_tokens;
use super::{Completion, ConcurrencyMode, DecodeParams, FinishReason, GatewayError, Generator};
use serde::{Deserialize, Serialize};
use std::sync::Mutex;

/// One scripted continuation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedCompletion {
    pub text: String,
    /// Uniform per-token log-prob, used when `log_probs` is absent.
    #[serde(default = "default_log_prob")]
    pub log_prob: f64,
    /// Explicit per-token log-probs; length must match the token split of
    /// `text`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_probs: Option<Vec<f64>>,
    #[serde(default = "default_finish")]
    pub finish_reason: FinishReason,
}

fn default_log_prob() -> f64 {
    -1.0
}

fn default_finish() -> FinishReason {
    FinishReason::StopToken
}

impl ScriptedCompletion {
    pub fn new(text: impl Into<String>, log_prob: f64) -> Self {
        Self {
            text: text.into(),
            log_prob,
            log_probs: None,
            finish_reason: FinishReason::StopToken,
        }
    }

    pub fn with_log_probs(mut self, log_probs: Vec<f64>) -> Self {
        self.log_probs = Some(log_probs);
        self
    }
}

/// A prompt pattern and the continuations it yields, in branch order.
/// An empty pattern matches every prompt; otherwise substring match.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default)]
    pub pattern: String,
    pub continuations: Vec<ScriptedCompletion>,
}

impl ScriptEntry {
    pub fn new(pattern: impl Into<String>, continuations: Vec<ScriptedCompletion>) -> Self {
        Self {
            pattern: pattern.into(),
            continuations,
        }
    }
}

/// Replayable generator backed by a script.
pub struct ScriptedGenerator {
    entries: Vec<ScriptEntry>,
    score_log_prob: f64,
    mode: ConcurrencyMode,
    transcript: Mutex<Vec<String>>,
}

impl ScriptedGenerator {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self {
            entries,
            score_log_prob: -1.0,
            mode: ConcurrencyMode::Serialized,
            transcript: Mutex::new(Vec::new()),
        }
    }

    /// A single catch-all entry whose branches are the given texts, each
    /// with uniform per-token log-prob −1.0.
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Self {
        let continuations = texts
            .iter()
            .map(|t| ScriptedCompletion::new(t.as_ref(), -1.0))
            .collect();
        Self::new(vec![ScriptEntry::new("", continuations)])
    }

    /// Uniform per-token log-prob reported by [`score_continuation`].
    ///
    /// [`score_continuation`]: Generator::score_continuation
    pub fn with_score_log_prob(mut self, log_prob: f64) -> Self {
        self.score_log_prob = log_prob;
        self
    }

    /// Scripted replay is genuinely stateless, so tests may opt in to
    /// concurrent use; the default declares the serialized contract.
    pub fn with_concurrency(mut self, mode: ConcurrencyMode) -> Self {
        self.mode = mode;
        self
    }

    /// Parse a line-delimited script: one JSON [`ScriptEntry`] per line,
    /// blank lines ignored.
    pub fn parse_script(text: &str) -> Result<Vec<ScriptEntry>, GatewayError> {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|line| {
                serde_json::from_str(line)
                    .map_err(|e| GatewayError::MalformedResponse(format!("script line: {e}")))
            })
            .collect()
    }

    pub fn load_script(path: &std::path::Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::MalformedResponse(format!("script file: {e}")))?;
        Ok(Self::new(Self::parse_script(&text)?))
    }

    /// Every call made so far, one JSON record per line. Two runs over the
    /// same script and prompt sequence produce byte-identical transcripts.
    pub fn transcript(&self) -> String {
        self.transcript.lock().unwrap().join("\n")
    }

    fn entry_for(&self, prompt: &str) -> Result<&ScriptEntry, GatewayError> {
        self.entries
            .iter()
            .find(|e| prompt.contains(&e.pattern))
            .ok_or_else(|| {
                GatewayError::ScriptExhausted(format!(
                    "no script entry matches prompt {:?}",
                    truncate_for_msg(prompt)
                ))
            })
    }

    fn record(&self, op: &str, prompt: &str, texts: &[&str]) {
        let line = serde_json::json!({ "op": op, "prompt": prompt, "texts": texts });
        self.transcript.lock().unwrap().push(line.to_string());
    }

    fn shape(
        &self,
        scripted: &ScriptedCompletion,
        params: &DecodeParams,
    ) -> Result<Completion, GatewayError> {
        let tokens = split_tokens(&scripted.text);
        let log_probs = match &scripted.log_probs {
            Some(explicit) => {
                if explicit.len() != tokens.len() {
                    return Err(GatewayError::MalformedResponse(format!(
                        "script continuation has {} log-probs for {} tokens",
                        explicit.len(),
                        tokens.len()
                    )));
                }
                explicit.clone()
            }
            None => vec![scripted.log_prob; tokens.len()],
        };
        let mut completion = Completion {
            text: scripted.text.clone(),
            tokens,
            log_probs,
            finish_reason: scripted.finish_reason,
        };

        // Stop sequences cut at token granularity: the first token that
        // would complete a stop sequence is dropped along with the rest.
        if let Some(cut) = stop_cut(&completion.tokens, &params.stop_sequences) {
            completion.tokens.truncate(cut);
            completion.log_probs.truncate(cut);
            completion.text = completion.tokens.concat();
            completion.finish_reason = FinishReason::StopToken;
        }
        if completion.tokens.len() > params.max_tokens {
            completion.tokens.truncate(params.max_tokens);
            completion.log_probs.truncate(params.max_tokens);
            completion.text = completion.tokens.concat();
            completion.finish_reason = FinishReason::MaxTokens;
        }
        if !params.want_log_probs {
            completion.tokens.clear();
            completion.log_probs.clear();
        }
        completion.check()?;
        Ok(completion)
    }
}

/// Index of the first token at which a stop sequence becomes visible.
fn stop_cut(tokens: &[String], stops: &[String]) -> Option<usize> {
    if stops.is_empty() || stops.iter().all(|s| s.is_empty()) {
        return None;
    }
    let mut text = String::new();
    for (i, tok) in tokens.iter().enumerate() {
        text.push_str(tok);
        if stops.iter().any(|s| !s.is_empty() && text.contains(s.as_str())) {
            return Some(i);
        }
    }
    None
}

impl Generator for ScriptedGenerator {
    fn complete(&self, prompt: &str, params: &DecodeParams) -> Result<Completion, GatewayError> {
        let entry = self.entry_for(prompt)?;
        let first = entry.continuations.first().ok_or_else(|| {
            GatewayError::ScriptExhausted("matched entry has no continuations".into())
        })?;
        let completion = self.shape(first, params)?;
        self.record("complete", prompt, &[completion.text.as_str()]);
        Ok(completion)
    }

    fn complete_many(
        &self,
        prompt: &str,
        params: &DecodeParams,
        n: usize,
    ) -> Result<Vec<Completion>, GatewayError> {
        let entry = self.entry_for(prompt)?;
        if entry.continuations.len() < n {
            return Err(GatewayError::ScriptExhausted(format!(
                "asked for {n} branches but the entry scripts only {}",
                entry.continuations.len()
            )));
        }
        let completions: Vec<Completion> = entry.continuations[..n]
            .iter()
            .map(|c| self.shape(c, params))
            .collect::<Result<_, _>>()?;
        let texts: Vec<&str> = completions.iter().map(|c| c.text.as_str()).collect();
        self.record("complete_many", prompt, &texts);
        Ok(completions)
    }

    fn score_continuation(&self, prompt: &str, target: &str) -> Result<Vec<f64>, GatewayError> {
        let log_probs = vec![self.score_log_prob; split_tokens(target).len()];
        self.record("score", prompt, &[target]);
        Ok(log_probs)
    }

    fn concurrency(&self) -> ConcurrencyMode {
        self.mode
    }
}

fn truncate_for_msg(s: &str) -> String {
    const LIMIT: usize = 120;
    if s.len() <= LIMIT {
        s.to_string()
    } else {
        let cut = (0..=LIMIT).rev().find(|i| s.is_char_boundary(*i)).unwrap_or(0);
        format!("{}…", &s[..cut])
    }
}
