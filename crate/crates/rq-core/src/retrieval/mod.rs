//! Retrieval backends behind one interface: BM25 over a local corpus,
//! embedding-based reranking of provided candidates, and a web-search
//! client returning title/snippet/locator.
//!
//! The engine treats retrieval as a black box: it sees only the
//! [`Document`](crate::protocol::Document) contract, never backend
//! internals.

mod bm25;
mod embedding;
mod web;

pub use bm25::{
    bm25_score, retrieve_bm25, retrieve_bm25_with, tokenize_text, CorpusDoc, CorpusIndex,
    DEFAULT_B, DEFAULT_K1,
};
pub use embedding::{
    cosine_similarity, retrieve_embedding, Embedder, EmbeddingVector, HttpEmbedder,
};
pub use web::{web_search, HttpSearchClient, SearchClient, SearchHit, StubSearchClient, TokenBucket};

use crate::protocol::Document;
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum RetrievalError {
    #[error("unknown document id `{0}`")]
    UnknownDocument(String),
    #[error("cannot retrieve from an empty index")]
    EmptyIndex,
    #[error("embedding service unavailable: {0}")]
    EmbeddingUnavailable(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("search service unavailable: {0}")]
    SearchUnavailable(String),
    #[error("rate limited; retry after {retry_after:?}")]
    RateLimited { retry_after: Duration },
}

/// Uniform retrieval interface the engine calls per refined query.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Document>, RetrievalError>;
}

/// BM25 retrieval over an in-memory corpus index.
pub struct Bm25Retriever {
    index: CorpusIndex,
}

impl Bm25Retriever {
    pub fn new(index: CorpusIndex) -> Self {
        Self { index }
    }

    pub fn index(&self) -> &CorpusIndex {
        &self.index
    }
}

impl Retriever for Bm25Retriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Document>, RetrievalError> {
        retrieve_bm25(query, k, &self.index)
    }
}

/// Embedding rerank over a fixed candidate pool (reading-comprehension
/// style: the pool comes with the question, retrieval only reorders it).
pub struct EmbeddingRetriever {
    candidates: Vec<Document>,
    embedder: Arc<dyn Embedder>,
}

impl EmbeddingRetriever {
    pub fn new(candidates: Vec<Document>, embedder: Arc<dyn Embedder>) -> Self {
        Self {
            candidates,
            embedder,
        }
    }
}

impl Retriever for EmbeddingRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Document>, RetrievalError> {
        retrieve_embedding(query, &self.candidates, k, self.embedder.as_ref())
    }
}

/// Web search via a [`SearchClient`].
pub struct WebRetriever {
    client: Arc<dyn SearchClient>,
}

impl WebRetriever {
    pub fn new(client: Arc<dyn SearchClient>) -> Self {
        Self { client }
    }
}

impl Retriever for WebRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Document>, RetrievalError> {
        web_search(query, k, self.client.as_ref())
    }
}

/// Builds the retriever a single item uses, honoring per-item candidate
/// pools (reading-comprehension style) when present.
pub trait RetrieverProvider: Send + Sync {
    fn retriever_for(
        &self,
        candidates: Option<&[Document]>,
    ) -> Result<Box<dyn Retriever>, RetrievalError>;
}

/// Always the same retriever, candidates ignored.
pub struct FixedRetrieverProvider(pub Arc<dyn Retriever>);

impl RetrieverProvider for FixedRetrieverProvider {
    fn retriever_for(
        &self,
        _candidates: Option<&[Document]>,
    ) -> Result<Box<dyn Retriever>, RetrievalError> {
        Ok(Box::new(SharedRetriever(self.0.clone())))
    }
}

struct SharedRetriever(Arc<dyn Retriever>);

impl Retriever for SharedRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Document>, RetrievalError> {
        self.0.retrieve(query, k)
    }
}

/// Provider wired from configured backends, dispatching on the search
/// source and per-item candidates.
pub struct SourceRetrieverProvider {
    source: crate::engine::SearchSource,
    corpus: Option<Arc<CorpusIndex>>,
    embedder: Option<Arc<dyn Embedder>>,
    web: Option<Arc<dyn SearchClient>>,
}

impl SourceRetrieverProvider {
    pub fn new(source: crate::engine::SearchSource) -> Self {
        Self {
            source,
            corpus: None,
            embedder: None,
            web: None,
        }
    }

    pub fn with_corpus(mut self, index: CorpusIndex) -> Self {
        self.corpus = Some(Arc::new(index));
        self
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn with_web(mut self, client: Arc<dyn SearchClient>) -> Self {
        self.web = Some(client);
        self
    }
}

impl RetrieverProvider for SourceRetrieverProvider {
    fn retriever_for(
        &self,
        candidates: Option<&[Document]>,
    ) -> Result<Box<dyn Retriever>, RetrievalError> {
        use crate::engine::SearchSource;
        match self.source {
            SearchSource::Bm25Corpus => {
                if let Some(pool) = candidates {
                    // Index the candidate pool itself: locator becomes the
                    // document id, snippet the body.
                    let docs = pool
                        .iter()
                        .map(|d| CorpusDoc {
                            id: d.locator.clone(),
                            title: d.title.clone(),
                            body: d.snippet.clone(),
                        })
                        .collect();
                    Ok(Box::new(Bm25Retriever::new(CorpusIndex::build(docs))))
                } else {
                    let index = self.corpus.clone().ok_or_else(|| {
                        RetrievalError::SearchUnavailable("no corpus configured".into())
                    })?;
                    Ok(Box::new(SharedIndexRetriever(index)))
                }
            }
            SearchSource::EmbeddingCandidates => {
                let embedder = self.embedder.clone().ok_or_else(|| {
                    RetrievalError::EmbeddingUnavailable("no embedder configured".into())
                })?;
                let pool = candidates.ok_or_else(|| {
                    RetrievalError::EmbeddingUnavailable(
                        "embedding retrieval reranks provided candidates; none given".into(),
                    )
                })?;
                Ok(Box::new(EmbeddingRetriever::new(pool.to_vec(), embedder)))
            }
            SearchSource::WebSearch => {
                let client = self.web.clone().ok_or_else(|| {
                    RetrievalError::SearchUnavailable("no search client configured".into())
                })?;
                Ok(Box::new(WebRetriever::new(client)))
            }
        }
    }
}

struct SharedIndexRetriever(Arc<CorpusIndex>);

impl Retriever for SharedIndexRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Document>, RetrievalError> {
        retrieve_bm25(query, k, &self.0)
    }
}
