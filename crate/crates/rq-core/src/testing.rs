//! Deterministic fixtures shared by unit tests, integration tests, and the
//! benchmark suite: seeded random trajectories, a stub retriever, a
//! scripted mock benchmark, and a small fully-scripted task pool.

use crate::dataset::PoolRecord;
use crate::engine::{SearchConfig, SearchSource};
use crate::evaluation::BenchmarkItem;
use crate::gateway::{ConcurrencyMode, ScriptEntry, ScriptedCompletion, ScriptedGenerator};
use crate::protocol::{Document, RefinementAction, SearchStep, Trajectory};
use crate::retrieval::{CorpusDoc, RetrievalError, Retriever};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Seeded RNG for reproducible fixtures.
pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Text fragments chosen to stress the protocol: control tokens, reserved
/// markers, backslashes, newlines, evidence-layout lookalikes.
const FRAGMENTS: &[&str] = &[
    "data",
    "Québec",
    "x1",
    "[S_REWRITE]",
    "[EOS]",
    "\\",
    "\n",
    "[USA]",
    "---",
    "Title: fake",
    "a b",
    "?!",
    "[S_UNKNOWN_MARKER]",
    "[/R_EVIDENCE]",
    "  ",
    "snippet text",
];

fn random_text(rng: &mut StdRng, min_fragments: usize) -> String {
    let n = rng.random_range(min_fragments..=4.max(min_fragments));
    (0..n)
        .map(|_| FRAGMENTS[rng.random_range(0..FRAGMENTS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_score(rng: &mut StdRng) -> f64 {
    if rng.random_bool(0.25) {
        rng.random_range(-5..50) as f64
    } else {
        rng.random_range(-1.0e3..1.0e3)
    }
}

/// A structurally valid trajectory with randomized payloads, step shapes,
/// and token log-probs. The answer span is always non-empty so the
/// trajectory is scorable.
pub fn random_trajectory(rng: &mut StdRng) -> Trajectory {
    let input = random_text(rng, 1);
    let n_steps = rng.random_range(0..=3);
    let actions = [
        RefinementAction::Rewrite,
        RefinementAction::Decompose,
        RefinementAction::Disambiguate,
    ];
    let steps = (1..=n_steps)
        .map(|turn| {
            let n_docs = rng.random_range(0..=3);
            let documents = (1..=n_docs)
                .map(|rank| Document {
                    title: if rng.random_bool(0.2) {
                        String::new()
                    } else {
                        random_text(rng, 1)
                    },
                    snippet: random_text(rng, 1),
                    locator: format!("doc-{}", rng.random_range(0..1000)),
                    rank,
                    score: random_score(rng),
                })
                .collect();
            SearchStep {
                turn,
                action: actions[rng.random_range(0..actions.len())],
                refined_query: random_text(rng, 1),
                documents,
            }
        })
        .collect();

    let n_tokens = rng.random_range(1..=12);
    let generated_tokens = (0..n_tokens)
        .map(|i| {
            let lp = if rng.random_bool(0.1) {
                0.0
            } else {
                -rng.random_range(0.0..3.0)
            };
            (format!("tok{i} "), lp)
        })
        .collect::<Vec<_>>();
    let answer_start = rng.random_range(0..n_tokens);

    Trajectory {
        input,
        steps,
        final_answer: random_text(rng, 0),
        generated_tokens,
        answer_start,
        evidence_token_spans: Vec::new(),
    }
}

/// Deterministic retriever producing `k` synthetic documents per query.
pub struct StubRetriever;

impl Retriever for StubRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Document>, RetrievalError> {
        Ok((1..=k)
            .map(|rank| Document {
                title: format!("stub doc {rank}"),
                snippet: format!("evidence {rank} for {query}"),
                locator: format!("stub:{rank}"),
                rank,
                score: 1.0 / rank as f64,
            })
            .collect())
    }
}

/// A fully scripted benchmark: every item's script holds one wrong direct
/// answer and one refine path that lands on the gold answer, so the upper
/// bound is always 100% while individual strategies miss every third item.
pub struct MockBenchmark {
    pub items: Vec<BenchmarkItem>,
    pub script: Vec<ScriptEntry>,
    pub config: SearchConfig,
}

impl MockBenchmark {
    pub fn new(n: usize) -> Self {
        let mut items = Vec::with_capacity(n);
        let mut script = Vec::with_capacity(2 * n);
        for i in 0..n {
            let question = format!("mock question {i:03}");
            let gold = format!("goldanswer{i:03}");
            let wrong = format!("plainly wrong {i:03}");
            let refined = format!("mockrefined {i:03}");

            items.push(BenchmarkItem {
                id: format!("mock-{i:03}"),
                question: question.clone(),
                choices: None,
                gold: vec![gold.clone()],
                candidates: None,
            });

            // Every third item gives the wrong direct answer the higher
            // confidence, so strategies pick it and only the upper bound
            // stays perfect.
            let wrong_lp = if i % 3 == 0 { -0.05 } else { -2.0 };
            let gold_completion =
                ScriptedCompletion::new(format!("[A_RESPONSE] {gold}\n[EOS]"), -0.5);
            // Deeper entry first: its pattern only occurs after the refine
            // step ran.
            script.push(ScriptEntry::new(
                refined.clone(),
                vec![gold_completion.clone(), gold_completion],
            ));
            script.push(ScriptEntry::new(
                question,
                vec![
                    ScriptedCompletion::new(format!("[A_RESPONSE] {wrong}\n[EOS]"), wrong_lp),
                    ScriptedCompletion::new(format!("[S_DECOMPOSE] {refined}"), -0.5),
                ],
            ));
        }
        let config = SearchConfig {
            width: 2,
            max_depth: 2,
            top_k: 2,
            ..SearchConfig::default()
        };
        Self {
            items,
            script,
            config,
        }
    }

    pub fn generator(&self) -> ScriptedGenerator {
        ScriptedGenerator::new(self.script.clone()).with_concurrency(ConcurrencyMode::Concurrent)
    }
}

/// A scripted two-hop question ("who is the mother of the spouse of …")
/// where only the decompose path retrieves both hop documents.
///
/// Branches at the root: a rewrite that single-shot searches (sees hop 1
/// only, answers wrong), a decompose chain that reaches both hops and the
/// right answer, and a wrong direct answer.
pub struct TwoHopFixture {
    pub question: &'static str,
    pub gold: &'static str,
    pub script: Vec<ScriptEntry>,
    pub corpus: Vec<CorpusDoc>,
    pub config: SearchConfig,
}

impl TwoHopFixture {
    pub fn new() -> Self {
        let wrong = ScriptedCompletion::new("[A_RESPONSE] Morgan Stone\n[EOS]", -1.0);
        let script = vec![
            // Deepest first: the hop-2 node is forced to answer at max depth.
            ScriptEntry::new(
                "who is the mother of Jamie Rivers",
                vec![ScriptedCompletion::new(" Dana Rivers\n[EOS]", -0.1)],
            ),
            ScriptEntry::new(
                "who is Alex Stone married to",
                vec![
                    ScriptedCompletion::new(
                        "[S_DECOMPOSE] who is the mother of Jamie Rivers",
                        -0.5,
                    ),
                    ScriptedCompletion::new("[A_RESPONSE] Jamie Rivers\n[EOS]", -1.2),
                    ScriptedCompletion::new("[A_RESPONSE] Jamie Rivers\n[EOS]", -1.2),
                ],
            ),
            ScriptEntry::new(
                "Alex Stone spouse mother",
                vec![wrong.clone(), wrong.clone(), wrong],
            ),
            ScriptEntry::new(
                "who is the mother of the spouse of Alex Stone",
                vec![
                    ScriptedCompletion::new("[S_REWRITE] Alex Stone spouse mother", -0.5),
                    ScriptedCompletion::new("[S_DECOMPOSE] who is Alex Stone married to", -0.5),
                    ScriptedCompletion::new("[A_RESPONSE] probably Morgan Stone\n[EOS]", -0.9),
                ],
            ),
        ];
        let corpus = vec![
            CorpusDoc {
                id: "hop1".into(),
                title: "Alex Stone".into(),
                body: "Alex Stone is married to Jamie Rivers".into(),
            },
            CorpusDoc {
                id: "hop2".into(),
                title: "Jamie Rivers".into(),
                body: "the mother of Jamie Rivers is Dana Rivers".into(),
            },
            CorpusDoc {
                id: "noise".into(),
                title: "Gardening".into(),
                body: "notes about soil and tomatoes".into(),
            },
        ];
        let config = SearchConfig {
            width: 3,
            max_depth: 2,
            top_k: 1,
            ..SearchConfig::default()
        };
        Self {
            question: "who is the mother of the spouse of Alex Stone?",
            gold: "Dana Rivers",
            script,
            corpus,
            config,
        }
    }

    pub fn generator(&self) -> ScriptedGenerator {
        ScriptedGenerator::new(self.script.clone()).with_concurrency(ConcurrencyMode::Concurrent)
    }

    pub fn retriever(&self) -> crate::retrieval::Bm25Retriever {
        crate::retrieval::Bm25Retriever::new(crate::retrieval::CorpusIndex::build(
            self.corpus.clone(),
        ))
    }
}

impl Default for TwoHopFixture {
    fn default() -> Self {
        Self::new()
    }
}

/// A 12-instance pool (4 per category) with a fully scripted annotator and
/// a small corpus, for deterministic dataset builds.
pub struct ToyPool {
    pub records: Vec<PoolRecord>,
    pub script: Vec<ScriptEntry>,
    pub corpus: Vec<CorpusDoc>,
}

impl ToyPool {
    pub fn new() -> Self {
        let mut records = Vec::new();
        let mut script = Vec::new();
        let mut corpus = Vec::new();

        let reply = |pattern: String, text: String| {
            ScriptEntry::new(pattern, vec![ScriptedCompletion::new(text, -0.1)])
        };

        // Multi-turn dialogue instances; the first is a greeting that needs
        // no retrieval.
        for i in 0..4 {
            let id = format!("t{i}");
            let (input, necessity_reply) = if i == 0 {
                ("thanks, that was helpful!".to_string(), "no".to_string())
            } else {
                (
                    format!("how big is the lake {i}?"),
                    format!("yes\nsurface area of lake number {i}"),
                )
            };
            records.push(PoolRecord {
                id: id.clone(),
                source: "lima".into(),
                input: input.clone(),
                output: format!("original reply {id}"),
                candidates: None,
                support: None,
            });
            script.push(reply(
                format!("{input}\nRetrieval necessity:"),
                necessity_reply,
            ));
            script.push(reply(
                format!("{input}\nGrounded answer:"),
                format!("grounded reply {id}"),
            ));
            corpus.push(CorpusDoc {
                id: format!("corpus-t{i}"),
                title: format!("lake number {i}"),
                body: format!("surface area of lake number {i} is {i}00 km2"),
            });
        }

        // Multi-hop instances with candidate pools and support ids.
        for i in 0..4 {
            let id = format!("m{i}");
            let input = format!("who is the spouse of the director of film {i}?");
            let candidates = vec![
                Document::new(
                    format!("film {i}"),
                    format!("film {i} was directed by director{i}"),
                    format!("{id}-d1"),
                    1,
                    0.0,
                ),
                Document::new(
                    format!("director{i}"),
                    format!("director{i} is married to spouse{i}"),
                    format!("{id}-d2"),
                    2,
                    0.0,
                ),
                Document::new(
                    "gardening",
                    "an unrelated note about gardening",
                    format!("{id}-d3"),
                    3,
                    0.0,
                ),
            ];
            records.push(PoolRecord {
                id: id.clone(),
                source: "hotpotqa".into(),
                input: input.clone(),
                output: format!("spouse{i}"),
                candidates: Some(candidates),
                support: Some(vec![format!("{id}-d1"), format!("{id}-d2")]),
            });
            script.push(reply(
                format!("{input}\nDecomposed queries:"),
                format!("who directed film {i}?\nwho is director{i} married to?"),
            ));
            script.push(reply(
                format!("{input}\nGrounded answer:"),
                format!("spouse{i}"),
            ));
        }

        // Ambiguous instances.
        for i in 0..4 {
            let id = format!("a{i}");
            let input = format!("where is the spring {i}?");
            records.push(PoolRecord {
                id: id.clone(),
                source: "asqa".into(),
                input: input.clone(),
                output: format!("original ambiguous answer {id}"),
                candidates: None,
                support: None,
            });
            script.push(reply(
                format!("{input}\nDisambiguated queries:"),
                format!("where is the water spring named {i}?"),
            ));
            script.push(reply(
                format!("{input}\nGrounded answer:"),
                format!("the spring {i} is in valley {i}"),
            ));
            corpus.push(CorpusDoc {
                id: format!("corpus-a{i}"),
                title: format!("spring named {i}"),
                body: format!("the water spring named {i} lies in valley {i}"),
            });
        }

        Self {
            records,
            script,
            corpus,
        }
    }

    pub fn annotator(&self) -> ScriptedGenerator {
        ScriptedGenerator::new(self.script.clone()).with_concurrency(ConcurrencyMode::Concurrent)
    }

    pub fn provider(&self) -> crate::retrieval::SourceRetrieverProvider {
        crate::retrieval::SourceRetrieverProvider::new(SearchSource::Bm25Corpus)
            .with_corpus(crate::retrieval::CorpusIndex::build(self.corpus.clone()))
    }
}

impl Default for ToyPool {
    fn default() -> Self {
        Self::new()
    }
}
