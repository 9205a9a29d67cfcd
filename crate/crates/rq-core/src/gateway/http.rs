//! Remote completion client.
//!
//! Wire contract: `POST <url>` with body
//! `{prompt, max_tokens, temperature, stop, logprobs, n}`; the reply is
//! `{choices: [{text, tokens, token_logprobs, finish_reason}]}`.
//! Target scoring reuses the same shape with an extra `score_target` field;
//! backends that reject it surface as [`GatewayError::Unsupported`].

use super::{Completion, ConcurrencyMode, DecodeParams, FinishReason, GatewayError, Generator};
use serde::{Deserialize, Serialize};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    stop: &'a [String],
    logprobs: bool,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    score_target: Option<&'a str>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    text: String,
    #[serde(default)]
    tokens: Vec<String>,
    #[serde(default)]
    token_logprobs: Vec<f64>,
    finish_reason: FinishReason,
}

impl WireChoice {
    fn into_completion(self) -> Result<Completion, GatewayError> {
        let completion = Completion {
            text: self.text,
            tokens: self.tokens,
            log_probs: self.token_logprobs,
            finish_reason: self.finish_reason,
        };
        completion.check()?;
        Ok(completion)
    }
}

/// Counting gate capping in-flight requests.
struct Gate {
    in_flight: Mutex<usize>,
    released: Condvar,
    cap: usize,
}

impl Gate {
    fn new(cap: usize) -> Self {
        Self {
            in_flight: Mutex::new(0),
            released: Condvar::new(),
            cap: cap.max(1),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut count = self.in_flight.lock().unwrap();
        while *count >= self.cap {
            count = self.released.wait(count).unwrap();
        }
        *count += 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut count = self.gate.in_flight.lock().unwrap();
        *count -= 1;
        self.gate.released.notify_one();
    }
}

/// HTTP generator client. Concurrent-safe; parallel callers are throttled
/// by the in-flight cap.
pub struct HttpGenerator {
    client: reqwest::blocking::Client,
    url: String,
    gate: Gate,
}

impl HttpGenerator {
    pub fn new(url: impl Into<String>) -> Self {
        Self::with_limits(url, 4, Duration::from_secs(60))
    }

    pub fn with_limits(url: impl Into<String>, max_in_flight: usize, timeout: Duration) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("reqwest client");
        Self {
            client,
            url: url.into(),
            gate: Gate::new(max_in_flight),
        }
    }

    fn post(&self, request: &WireRequest<'_>) -> Result<WireResponse, GatewayError> {
        let _slot = self.gate.acquire();
        let response = self
            .client
            .post(&self.url)
            .json(request)
            .send()
            .map_err(|e| GatewayError::EndpointUnavailable(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let err = format!("{} from {}", status, self.url);
            return if request.score_target.is_some() && status.is_client_error() {
                Err(GatewayError::Unsupported(err))
            } else {
                Err(GatewayError::EndpointUnavailable(err))
            };
        }
        response
            .json::<WireResponse>()
            .map_err(|e| GatewayError::MalformedResponse(e.to_string()))
    }

    fn request_n(
        &self,
        prompt: &str,
        params: &DecodeParams,
        n: usize,
    ) -> Result<Vec<Completion>, GatewayError> {
        let request = WireRequest {
            prompt,
            max_tokens: params.max_tokens,
            temperature: params.temperature,
            stop: &params.stop_sequences,
            logprobs: params.want_log_probs,
            n,
            score_target: None,
        };
        let response = self.post(&request)?;
        if response.choices.len() < n {
            return Err(GatewayError::MalformedResponse(format!(
                "asked for {n} choices, got {}",
                response.choices.len()
            )));
        }
        response
            .choices
            .into_iter()
            .take(n)
            .map(WireChoice::into_completion)
            .collect()
    }
}

impl Generator for HttpGenerator {
    fn complete(&self, prompt: &str, params: &DecodeParams) -> Result<Completion, GatewayError> {
        Ok(self.request_n(prompt, params, 1)?.remove(0))
    }

    fn complete_many(
        &self,
        prompt: &str,
        params: &DecodeParams,
        n: usize,
    ) -> Result<Vec<Completion>, GatewayError> {
        self.request_n(prompt, params, n)
    }

    fn score_continuation(&self, prompt: &str, target: &str) -> Result<Vec<f64>, GatewayError> {
        let request = WireRequest {
            prompt,
            max_tokens: 0,
            temperature: 0.0,
            stop: &[],
            logprobs: true,
            n: 1,
            score_target: Some(target),
        };
        let response = self.post(&request)?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::MalformedResponse("empty choices".into()))?;
        if let Some(bad) = choice.token_logprobs.iter().find(|lp| **lp > 0.0) {
            return Err(GatewayError::MalformedResponse(format!(
                "positive log-prob {bad} in score response"
            )));
        }
        Ok(choice.token_logprobs)
    }

    fn concurrency(&self) -> ConcurrencyMode {
        ConcurrencyMode::Concurrent
    }
}
