//! Web-search client: title, preview snippet, and URL only — result pages
//! are never scraped beyond the returned snippet.

use super::RetrievalError;
use crate::protocol::Document;
use serde::{Deserialize, Serialize};
use std::sync::Mutex;
use std::time::{Duration, Instant};

/// One search result as returned by a backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub snippet: String,
    pub url: String,
}

/// Search service: query in, hits out.
pub trait SearchClient: Send + Sync {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, RetrievalError>;
}

/// Up to `k` results in page order, mapped onto the document contract.
/// Hits with empty snippets are dropped so every returned document is
/// valid evidence.
pub fn web_search(
    query: &str,
    k: usize,
    client: &dyn SearchClient,
) -> Result<Vec<Document>, RetrievalError> {
    let hits = client.search(query, k)?;
    Ok(hits
        .into_iter()
        .filter(|h| !h.snippet.is_empty())
        .take(k)
        .enumerate()
        .map(|(i, hit)| Document {
            title: hit.title,
            snippet: hit.snippet,
            locator: hit.url,
            rank: i + 1,
            score: 0.0,
        })
        .collect())
}

/// Fixed-page stub for tests.
pub struct StubSearchClient {
    hits: Vec<SearchHit>,
}

impl StubSearchClient {
    pub fn new(hits: Vec<SearchHit>) -> Self {
        Self { hits }
    }
}

impl SearchClient for StubSearchClient {
    fn search(&self, _query: &str, k: usize) -> Result<Vec<SearchHit>, RetrievalError> {
        Ok(self.hits.iter().take(k).cloned().collect())
    }
}

/// Token bucket limiter; `acquire` blocks until a token is available.
pub struct TokenBucket {
    state: Mutex<BucketState>,
    capacity: f64,
    refill_per_sec: f64,
}

struct BucketState {
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    pub fn new(capacity: usize, refill_per_sec: f64) -> Self {
        Self {
            state: Mutex::new(BucketState {
                tokens: capacity as f64,
                last: Instant::now(),
            }),
            capacity: capacity.max(1) as f64,
            refill_per_sec: refill_per_sec.max(f64::MIN_POSITIVE),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap();
                let now = Instant::now();
                let elapsed = now.duration_since(state.last).as_secs_f64();
                state.tokens = (state.tokens + elapsed * self.refill_per_sec).min(self.capacity);
                state.last = now;
                if state.tokens >= 1.0 {
                    state.tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - state.tokens) / self.refill_per_sec)
            };
            std::thread::sleep(wait);
        }
    }
}

#[derive(Serialize)]
struct SearchRequest<'a> {
    query: &'a str,
    k: usize,
}

#[derive(Deserialize)]
struct SearchResponse {
    results: Vec<SearchHit>,
}

/// HTTP search client. Wire: `POST <url>` with `{query, k}`, reply
/// `{results: [{title, snippet, url}]}`. An API key, when set, is sent as
/// the `x-api-key` header.
pub struct HttpSearchClient {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    bucket: TokenBucket,
}

impl HttpSearchClient {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Self {
        Self::with_rate(url, api_key, 4, 4.0)
    }

    pub fn with_rate(
        url: impl Into<String>,
        api_key: Option<String>,
        burst: usize,
        per_sec: f64,
    ) -> Self {
        Self {
            client: reqwest::blocking::Client::new(),
            url: url.into(),
            api_key,
            bucket: TokenBucket::new(burst, per_sec),
        }
    }
}

impl SearchClient for HttpSearchClient {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, RetrievalError> {
        self.bucket.acquire();
        let mut request = self.client.post(&self.url).json(&SearchRequest { query, k });
        if let Some(key) = &self.api_key {
            request = request.header("x-api-key", key);
        }
        let response = request
            .send()
            .map_err(|e| RetrievalError::SearchUnavailable(e.to_string()))?;

        if response.status().as_u16() == 429 {
            let retry_after = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse::<u64>().ok())
                .map(Duration::from_secs)
                .unwrap_or(Duration::from_secs(1));
            return Err(RetrievalError::RateLimited { retry_after });
        }
        if !response.status().is_success() {
            return Err(RetrievalError::SearchUnavailable(format!(
                "{} from {}",
                response.status(),
                self.url
            )));
        }
        let body: SearchResponse = response
            .json()
            .map_err(|e| RetrievalError::SearchUnavailable(e.to_string()))?;
        Ok(body.results)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stub() -> StubSearchClient {
        StubSearchClient::new(vec![
            SearchHit {
                title: "Paris".into(),
                snippet: "Paris is the capital of France.".into(),
                url: "https://a".into(),
            },
            SearchHit {
                title: "France".into(),
                snippet: "France is a country.".into(),
                url: "https://b".into(),
            },
            SearchHit {
                title: "Capital".into(),
                snippet: "A capital is a city.".into(),
                url: "https://c".into(),
            },
        ])
    }

    #[test]
    fn passthrough_in_page_order() {
        let docs = web_search("capital of France", 3, &stub()).unwrap();
        assert_eq!(docs.len(), 3);
        assert_eq!(docs[0].title, "Paris");
        assert_eq!(docs[0].locator, "https://a");
        assert_eq!(docs[2].rank, 3);
    }

    #[test]
    fn k_truncates() {
        let docs = web_search("q", 1, &stub()).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].title, "Paris");
    }

    #[test]
    fn empty_snippets_are_dropped() {
        let client = StubSearchClient::new(vec![
            SearchHit {
                title: "empty".into(),
                snippet: "".into(),
                url: "https://x".into(),
            },
            SearchHit {
                title: "ok".into(),
                snippet: "text".into(),
                url: "https://y".into(),
            },
        ]);
        let docs = web_search("q", 2, &client).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].title, "ok");
        assert_eq!(docs[0].rank, 1);
    }

    #[test]
    fn token_bucket_eventually_grants() {
        let bucket = TokenBucket::new(1, 1000.0);
        for _ in 0..5 {
            bucket.acquire();
        }
    }
}
