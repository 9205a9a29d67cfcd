//! Search-augmented generation engine.
//!
//! The crate is organized around a control-token protocol for query
//! refinement: a generator emits refinement actions (rewrite, decompose,
//! disambiguate) or a final answer; non-answer actions trigger retrieval
//! and deepen a decoding tree. Completed root-to-leaf trajectories are
//! scored from their token log-probabilities and one is selected as the
//! final answer.
//!
//! Module map:
//!
//! - [`protocol`] — control-token grammar, trajectory types, render/parse
//! - [`gateway`] — generator abstraction (scripted replay + HTTP client)
//! - [`retrieval`] — BM25, embedding rerank, and web-search backends
//! - [`engine`] — tree-decoding search over generator and retriever
//! - [`selection`] — PPL / confidence / ensemble trajectory selection
//! - [`dataset`] — search-augmented training instance construction
//! - [`evaluation`] — QA metrics and benchmark harness
//! - [`testing`] — deterministic fixtures shared by tests and benches

pub mod dataset;
pub mod engine;
pub mod evaluation;
pub mod gateway;
pub(crate) mod par;
pub mod protocol;
pub mod retrieval;
pub mod selection;
pub mod testing;
pub mod util;

pub use engine::{SearchConfig, SearchSource, SelectionStrategy};
pub use protocol::{Document, RefinementAction, SearchStep, TokenTable, Trajectory};
