//! Okapi BM25 over an in-memory inverted index.

use super::RetrievalError;
use crate::par::{map_ordered, parallel_available};
use crate::protocol::Document;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

/// One raw corpus record, as ingested from line-delimited
/// `{id, title, body}` files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone)]
struct IndexedDoc {
    id: String,
    title: String,
    body: String,
    tokens: Vec<String>,
}

/// Immutable BM25 index: documents, document frequencies, lengths, and an
/// inverted postings map term → (doc position, term frequency).
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    documents: Vec<IndexedDoc>,
    doc_freq: HashMap<String, usize>,
    doc_len: HashMap<String, usize>,
    avg_doc_len: f64,
    total_docs: usize,
    postings: HashMap<String, Vec<(usize, usize)>>,
    position: HashMap<String, usize>,
}

/// Lowercase and split on non-alphanumeric runs. No stemming, no stopword
/// removal.
pub fn tokenize_text(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

impl CorpusIndex {
    pub fn build(docs: Vec<CorpusDoc>) -> Self {
        let documents: Vec<IndexedDoc> = docs
            .into_iter()
            .map(|d| {
                let tokens = tokenize_text(&d.body);
                IndexedDoc {
                    id: d.id,
                    title: d.title,
                    body: d.body,
                    tokens,
                }
            })
            .collect();

        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut doc_len: HashMap<String, usize> = HashMap::new();
        let mut postings: HashMap<String, Vec<(usize, usize)>> = HashMap::new();
        let mut position: HashMap<String, usize> = HashMap::new();

        for (pos, doc) in documents.iter().enumerate() {
            position.insert(doc.id.clone(), pos);
            doc_len.insert(doc.id.clone(), doc.tokens.len());
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for tok in &doc.tokens {
                *counts.entry(tok).or_insert(0) += 1;
            }
            for (term, tf) in counts {
                *doc_freq.entry(term.to_string()).or_insert(0) += 1;
                postings.entry(term.to_string()).or_default().push((pos, tf));
            }
        }

        let total_docs = documents.len();
        let avg_doc_len = if total_docs == 0 {
            0.0
        } else {
            doc_len.values().sum::<usize>() as f64 / total_docs as f64
        };

        Self {
            documents,
            doc_freq,
            doc_len,
            avg_doc_len,
            total_docs,
            postings,
            position,
        }
    }

    /// Parse line-delimited `{id, title, body}` records.
    pub fn parse_corpus(text: &str) -> Result<Vec<CorpusDoc>, serde_json::Error> {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(serde_json::from_str)
            .collect()
    }

    pub fn total_docs(&self) -> usize {
        self.total_docs
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn doc_len(&self, id: &str) -> Option<usize> {
        self.doc_len.get(id).copied()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(|d| d.id.as_str())
    }

    fn doc_at(&self, pos: usize) -> &IndexedDoc {
        &self.documents[pos]
    }

    fn term_frequency(&self, term: &str, pos: usize) -> usize {
        self.postings
            .get(term)
            .and_then(|posts| posts.iter().find(|(p, _)| *p == pos).map(|(_, tf)| *tf))
            .unwrap_or(0)
    }

    fn score_at(&self, query_terms: &[String], pos: usize, k1: f64, b: f64) -> f64 {
        let doc = self.doc_at(pos);
        let doc_len = doc.tokens.len() as f64;
        let n = self.total_docs as f64;
        let mut score = 0.0;
        for term in query_terms {
            let tf = self.term_frequency(term, pos) as f64;
            if tf == 0.0 {
                continue;
            }
            let df = self.doc_freq(term) as f64;
            // IDF: ln(N / (df + 0.5) + 1) — positive for every df, which
            // keeps tie handling simple.
            let idf = (n / (df + 0.5) + 1.0).ln();
            let norm = tf + k1 * (1.0 - b + b * doc_len / self.avg_doc_len);
            score += idf * tf * (k1 + 1.0) / norm;
        }
        score
    }
}

/// Okapi BM25 score of one document for the given query terms.
pub fn bm25_score(
    query_terms: &[String],
    doc_id: &str,
    index: &CorpusIndex,
    k1: f64,
    b: f64,
) -> Result<f64, RetrievalError> {
    let pos = *index
        .position
        .get(doc_id)
        .ok_or_else(|| RetrievalError::UnknownDocument(doc_id.to_string()))?;
    Ok(index.score_at(query_terms, pos, k1, b))
}

/// Top-k documents by BM25, score descending, ties broken by ascending
/// document id. Uses the parallel scoring path when compiled in.
pub fn retrieve_bm25(
    query: &str,
    k: usize,
    index: &CorpusIndex,
) -> Result<Vec<Document>, RetrievalError> {
    retrieve_bm25_with(query, k, index, parallel_available())
}

/// [`retrieve_bm25`] with an explicit sequential/parallel switch. Both
/// paths produce identical rankings.
pub fn retrieve_bm25_with(
    query: &str,
    k: usize,
    index: &CorpusIndex,
    parallel: bool,
) -> Result<Vec<Document>, RetrievalError> {
    if index.total_docs == 0 {
        return Err(RetrievalError::EmptyIndex);
    }
    let query_terms = tokenize_text(query);
    let positions: Vec<usize> = (0..index.total_docs).collect();
    let scores = map_ordered(&positions, parallel, |pos| {
        index.score_at(&query_terms, *pos, DEFAULT_K1, DEFAULT_B)
    });

    let mut ranked: Vec<(usize, f64)> = positions.into_iter().zip(scores).collect();
    ranked.sort_by(|(pa, sa), (pb, sb)| {
        sb.partial_cmp(sa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| index.doc_at(*pa).id.cmp(&index.doc_at(*pb).id))
    });

    Ok(ranked
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (pos, score))| {
            let doc = index.doc_at(pos);
            Document {
                title: doc.title.clone(),
                snippet: doc.body.clone(),
                locator: doc.id.clone(),
                rank: i + 1,
                score,
            }
        })
        .collect())
}
