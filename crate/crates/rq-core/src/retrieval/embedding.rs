//! Embedding-based reranking of candidate documents.

use super::RetrievalError;
use crate::protocol::Document;
use serde::{Deserialize, Serialize};

/// Fixed-length embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    dimension: usize,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        let dimension = values.len();
        Self { values, dimension }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Embedding service: texts in, equal-dimension vectors out.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError>;
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    let denom = norm_a.sqrt() * norm_b.sqrt();
    if denom == 0.0 {
        0.0
    } else {
        dot / denom
    }
}

/// Text a candidate is embedded from: its title and snippet.
fn candidate_text(doc: &Document) -> String {
    format!("{} {}", doc.title, doc.snippet)
}

/// Rerank `candidates` by cosine similarity between the query embedding and
/// each candidate's title+snippet embedding; top-k, ties keep the original
/// candidate order.
pub fn retrieve_embedding(
    query: &str,
    candidates: &[Document],
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<Document>, RetrievalError> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }

    let mut texts = Vec::with_capacity(candidates.len() + 1);
    texts.push(query.to_string());
    texts.extend(candidates.iter().map(candidate_text));
    let vectors = embedder.embed(&texts)?;
    if vectors.len() != texts.len() {
        return Err(RetrievalError::EmbeddingUnavailable(format!(
            "embedded {} of {} texts",
            vectors.len(),
            texts.len()
        )));
    }
    let dim = vectors[0].dimension();
    if let Some(bad) = vectors.iter().find(|v| v.dimension() != dim) {
        return Err(RetrievalError::DimensionMismatch {
            expected: dim,
            got: bad.dimension(),
        });
    }

    let query_vec = &vectors[0];
    let mut scored: Vec<(usize, f64)> = vectors[1..]
        .iter()
        .enumerate()
        .map(|(i, v)| (i, cosine_similarity(query_vec, v)))
        .collect();
    // Stable sort: equal similarities keep original candidate order.
    scored.sort_by(|(_, a), (_, b)| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));

    Ok(scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(rank0, (i, score))| {
            let mut doc = candidates[i].clone();
            doc.rank = rank0 + 1;
            doc.score = score;
            doc
        })
        .collect())
}

/// Remote embedding client. Wire: `POST <url>` with `{texts: [...]}`,
/// reply `{embeddings: [[...]]}`.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    url: String,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            client: reqwest::blocking::Client::new(),
            url: url.into(),
        }
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        let response = self
            .client
            .post(&self.url)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| RetrievalError::EmbeddingUnavailable(e.to_string()))?;
        if !response.status().is_success() {
            return Err(RetrievalError::EmbeddingUnavailable(format!(
                "{} from {}",
                response.status(),
                self.url
            )));
        }
        let body: EmbedResponse = response
            .json()
            .map_err(|e| RetrievalError::EmbeddingUnavailable(e.to_string()))?;
        Ok(body.embeddings.into_iter().map(EmbeddingVector::new).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Embedder mapping text length to a fixed 2-dim vector, for
    /// hand-computable cosines.
    struct LengthEmbedder;

    impl Embedder for LengthEmbedder {
        fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
            Ok(texts
                .iter()
                .map(|t| EmbeddingVector::new(vec![t.len() as f64, 1.0]))
                .collect())
        }
    }

    struct FixedEmbedder(Vec<Vec<f64>>);

    impl Embedder for FixedEmbedder {
        fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
            Ok(self.0[..texts.len()]
                .iter()
                .cloned()
                .map(EmbeddingVector::new)
                .collect())
        }
    }

    fn doc(title: &str, snippet: &str) -> Document {
        Document::new(title, snippet, format!("id-{title}"), 1, 0.0)
    }

    #[test]
    fn identical_embedding_ranks_first() {
        // Query vector equals candidate "b"'s vector exactly: cosine 1.
        let embedder = FixedEmbedder(vec![
            vec![3.0, 4.0],
            vec![-4.0, 3.0],
            vec![3.0, 4.0],
            vec![1.0, 0.0],
        ]);
        let candidates = vec![doc("a", "x"), doc("b", "x"), doc("c", "x")];
        let top = retrieve_embedding("q", &candidates, 3, &embedder).unwrap();
        assert_eq!(top[0].title, "b");
        assert!((top[0].score - 1.0).abs() < 1e-12);
        assert_eq!(top[0].rank, 1);
    }

    #[test]
    fn orthogonal_candidates_keep_original_order() {
        let embedder = FixedEmbedder(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 2.0],
            vec![0.0, 3.0],
        ]);
        let candidates = vec![doc("first", "x"), doc("second", "x"), doc("third", "x")];
        let top = retrieve_embedding("q", &candidates, 3, &embedder).unwrap();
        let titles: Vec<&str> = top.iter().map(|d| d.title.as_str()).collect();
        assert_eq!(titles, ["first", "second", "third"]);
        assert!(top.iter().all(|d| d.score == 0.0));
    }

    #[test]
    fn length_embedder_matches_hand_cosines() {
        // Query "qq" embeds to (2, 1). Candidates embed from "title snippet":
        // "aa b" → (4, 1), "cccccccc d" → (10, 1). cos((2,1),(4,1)) ≈ 0.9762
        // beats cos((2,1),(10,1)) ≈ 0.9340, so the shorter candidate wins.
        let candidates = vec![doc("cccccccc", "d"), doc("aa", "b")];
        let top = retrieve_embedding("qq", &candidates, 2, &LengthEmbedder).unwrap();
        assert_eq!(top[0].title, "aa");
        let expect_first = (2.0 * 4.0 + 1.0) / (5.0_f64.sqrt() * 17.0_f64.sqrt());
        assert!((top[0].score - expect_first).abs() < 1e-12);
    }

    #[test]
    fn k_truncates_and_empty_candidates_yield_empty() {
        let top = retrieve_embedding("q", &[], 3, &LengthEmbedder).unwrap();
        assert!(top.is_empty());
        let candidates = vec![doc("a", "x"), doc("b", "y")];
        let top = retrieve_embedding("q", &candidates, 1, &LengthEmbedder).unwrap();
        assert_eq!(top.len(), 1);
    }

    #[test]
    fn dimension_mismatch_detected() {
        let embedder = FixedEmbedder(vec![vec![1.0, 0.0], vec![1.0]]);
        let candidates = vec![doc("a", "x")];
        assert!(matches!(
            retrieve_embedding("q", &candidates, 1, &embedder),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
    }
}
