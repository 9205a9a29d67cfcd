//! Annotator prompts and reply parsing.
//!
//! The annotator is an ordinary completion service (same wire contract as
//! the generator). Prompts are built from the templates below; replies are
//! line-oriented: dialogue-style instances answer retrieval necessity on
//! the first line, every other category returns one refined query per
//! line with exactly one line break between lines.

use super::{Category, DatasetError, RawInstance};
use crate::gateway::{DecodeParams, Generator};
use crate::protocol::RefinementAction;
use serde::{Deserialize, Serialize};

/// Decode settings for every annotation call: deterministic, no
/// probability data needed.
pub const ANNOTATION_PARAMS: DecodeParams = DecodeParams {
    max_tokens: 512,
    temperature: 0.0,
    stop_sequences: Vec::new(),
    want_log_probs: false,
};

/// Prompt templates, one per category plus answer regeneration.
///
/// Placeholders: `{conversation_history}`, `{current_query}`,
/// `{provided_contexts}`, `{question}`, `{contexts}`. Each template ends
/// with a fixed header line the reply continues from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotationTemplates {
    pub multi_turn: String,
    pub decompose: String,
    pub disambiguate: String,
    pub answer: String,
}

impl Default for AnnotationTemplates {
    fn default() -> Self {
        Self {
            multi_turn: MULTI_TURN_TEMPLATE.to_string(),
            decompose: DECOMPOSE_TEMPLATE.to_string(),
            disambiguate: DISAMBIGUATE_TEMPLATE.to_string(),
            answer: ANSWER_TEMPLATE.to_string(),
        }
    }
}

const MULTI_TURN_TEMPLATE: &str = "\
You are given a dialogue and its latest user query. Decide whether answering \
needs a search engine. Reply with `yes` or `no` on the first line. Social or \
already-answered turns need no search. If yes, add one clearer, self-contained \
search query per line after it, with exactly one line break between lines and \
nothing else.

Worked example:
Conversation history:
User: I'm planning a trip to Japan in spring.
Current query:
When do they bloom there?
Retrieval necessity:
yes
cherry blossom bloom dates in Japan by region

Conversation history:
{conversation_history}
Current query:
{current_query}
Retrieval necessity:";

const DECOMPOSE_TEMPLATE: &str = "\
Break the question below into simpler sub-questions that can each be answered \
by a single search. Reply with one self-contained sub-question per line, in \
answering order, with exactly one line break between lines and nothing else.

Worked example:
Question:
Which country is the author of The Old Man and the Sea from?
Decomposed queries:
Who wrote The Old Man and the Sea?
Which country is Ernest Hemingway from?

Provided contexts:
{provided_contexts}
Question:
{question}
Decomposed queries:";

const DISAMBIGUATE_TEMPLATE: &str = "\
The question below may allow several readings. Rewrite it into one or more \
unambiguous search queries, each pinning down a single interpretation. Reply \
with one query per line, with exactly one line break between lines and \
nothing else.

Worked example:
Question:
Where was the first Apple store?
Disambiguated queries:
Where was the first Apple Inc. retail store located?

Question:
{question}
Disambiguated queries:";

const ANSWER_TEMPLATE: &str = "\
Answer the question using the retrieved contexts below. Ground every claim \
in the contexts when they are relevant; answer directly when they are empty.

Contexts:
{contexts}
Question:
{question}
Grounded answer:";

fn is_refusal(text: &str) -> bool {
    let t = text.trim().to_lowercase();
    ["i'm sorry", "i am sorry", "i cannot", "i can't", "as an ai"]
        .iter()
        .any(|p| t.starts_with(p))
}

/// Split a reply into its lines, enforcing the output contract: no blank
/// line between entries, no preamble (a line ending in `:`), not empty.
fn reply_lines(text: &str) -> Result<Vec<String>, DatasetError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(DatasetError::FormatViolation("empty reply".into()));
    }
    let mut lines = Vec::new();
    for line in trimmed.split('\n') {
        let line = line.trim();
        if line.is_empty() {
            return Err(DatasetError::FormatViolation(
                "blank line between entries".into(),
            ));
        }
        if line.ends_with(':') {
            return Err(DatasetError::FormatViolation(format!(
                "preamble line `{line}`"
            )));
        }
        lines.push(line.to_string());
    }
    Ok(lines)
}

/// Last non-empty line is the current query; everything before is history.
fn split_dialogue(x_origin: &str) -> (String, String) {
    let mut lines: Vec<&str> = x_origin.lines().collect();
    while matches!(lines.last(), Some(l) if l.trim().is_empty()) {
        lines.pop();
    }
    match lines.split_last() {
        Some((current, history)) => (history.join("\n"), current.trim().to_string()),
        None => (String::new(), x_origin.trim().to_string()),
    }
}

fn contexts_block(documents: impl Iterator<Item = (String, String)>) -> String {
    let mut out = String::new();
    for (title, snippet) in documents {
        out.push_str(&format!("Title: {title}\nSnippet: {snippet}\n"));
    }
    if out.is_empty() {
        out.push_str("(none)\n");
    }
    out
}

/// Prompt the annotator template for a raw instance. For multi-turn
/// dialogue the template ends with the `{current_query}` anchor so stub
/// scripts can route per instance.
pub fn annotation_prompt(raw: &RawInstance, templates: &AnnotationTemplates) -> String {
    match raw.category {
        Category::MultiTurn => {
            let (history, current) = split_dialogue(&raw.x_origin);
            templates
                .multi_turn
                .replace("{conversation_history}", &history)
                .replace("{current_query}", &current)
        }
        Category::MultiHop => {
            let contexts = contexts_block(
                raw.candidates
                    .iter()
                    .flatten()
                    .map(|d| (d.title.clone(), d.snippet.clone())),
            );
            templates
                .decompose
                .replace("{provided_contexts}", &contexts)
                .replace("{question}", raw.x_origin.trim())
        }
        Category::Ambiguous => templates
            .disambiguate
            .replace("{question}", raw.x_origin.trim()),
    }
}

/// Ask the annotator for refined queries.
///
/// Multi-turn replies carry a yes/no retrieval-necessity verdict first;
/// decompose and disambiguate replies are one query per line and always
/// imply necessity. Refusals and format violations fail the instance.
pub fn annotate_refinements(
    raw: &RawInstance,
    annotator: &dyn Generator,
    templates: &AnnotationTemplates,
) -> Result<(bool, Vec<(RefinementAction, String)>), DatasetError> {
    let prompt = annotation_prompt(raw, templates);
    let reply = annotator.complete(&prompt, &ANNOTATION_PARAMS)?;
    if is_refusal(&reply.text) {
        return Err(DatasetError::AnnotatorRefusal);
    }
    let lines = reply_lines(&reply.text)?;

    match raw.category {
        Category::MultiTurn => {
            let verdict = lines[0].trim_end_matches('.').to_lowercase();
            let necessity = match verdict.as_str() {
                "yes" => true,
                "no" => false,
                other => {
                    return Err(DatasetError::FormatViolation(format!(
                        "expected yes or no, got `{other}`"
                    )))
                }
            };
            let queries = if necessity {
                lines[1..]
                    .iter()
                    .map(|q| (RefinementAction::Rewrite, q.clone()))
                    .collect()
            } else {
                Vec::new()
            };
            Ok((necessity, queries))
        }
        Category::MultiHop => Ok((
            true,
            lines
                .into_iter()
                .map(|q| (RefinementAction::Decompose, q))
                .collect(),
        )),
        Category::Ambiguous => Ok((
            true,
            lines
                .into_iter()
                .map(|q| (RefinementAction::Disambiguate, q))
                .collect(),
        )),
    }
}

/// Ask the annotator for a context-grounded answer.
pub fn regenerate_answer(
    raw: &RawInstance,
    steps: &[crate::protocol::SearchStep],
    annotator: &dyn Generator,
    templates: &AnnotationTemplates,
) -> Result<String, DatasetError> {
    let contexts = contexts_block(
        steps
            .iter()
            .flat_map(|s| &s.documents)
            .map(|d| (d.title.clone(), d.snippet.clone())),
    );
    let prompt = templates
        .answer
        .replace("{contexts}", &contexts)
        .replace("{question}", raw.x_origin.trim());
    let reply = annotator.complete(&prompt, &ANNOTATION_PARAMS)?;
    if is_refusal(&reply.text) {
        return Err(DatasetError::AnnotatorRefusal);
    }
    let answer = reply.text.trim().to_string();
    if answer.is_empty() {
        return Err(DatasetError::FormatViolation("empty reply".into()));
    }
    Ok(answer)
}
