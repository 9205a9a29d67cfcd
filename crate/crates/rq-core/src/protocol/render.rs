//! Trajectory serialization.

use super::tokens::{escape, TokenTable};
use super::{Document, ProtocolError, Trajectory};

/// Delimiter line between documents inside an evidence block.
pub(super) const DOC_DELIMITER: &str = "---";

/// Serialize a complete trajectory: input, every refinement step with its
/// evidence, then the answer and end tokens.
///
/// Deterministic and injective: structurally equal trajectories render to
/// identical strings, distinct ones never collide (payloads are escaped,
/// structure is fixed).
pub fn render(trajectory: &Trajectory, table: &TokenTable) -> Result<String, ProtocolError> {
    let violations = super::structural_violations(trajectory);
    if let Some(first) = violations.into_iter().next() {
        return Err(ProtocolError::InvariantViolation(first));
    }

    let mut out = render_prefix_unchecked(trajectory, table);
    out.push('\n');
    out.push_str(&table.answer);
    out.push(' ');
    out.push_str(&escape(&trajectory.final_answer, table));
    out.push('\n');
    out.push_str(&table.end);
    Ok(out)
}

/// Serialize only the input and steps — the prompt a generator is
/// conditioned on when extending a partial trajectory.
pub fn render_prefix(trajectory: &Trajectory, table: &TokenTable) -> Result<String, ProtocolError> {
    let violations = super::structural_violations(trajectory);
    if let Some(first) = violations.into_iter().next() {
        return Err(ProtocolError::InvariantViolation(first));
    }
    Ok(render_prefix_unchecked(trajectory, table))
}

fn render_prefix_unchecked(trajectory: &Trajectory, table: &TokenTable) -> String {
    let mut out = escape(&trajectory.input, table);
    for step in &trajectory.steps {
        out.push('\n');
        out.push_str(table.action_token(step.action));
        out.push(' ');
        out.push_str(&escape(&step.refined_query, table));
        out.push('\n');
        out.push_str(&table.evidence_open);
        for (i, doc) in step.documents.iter().enumerate() {
            out.push('\n');
            if i > 0 {
                out.push_str(DOC_DELIMITER);
                out.push('\n');
            }
            render_document(&mut out, doc, table);
        }
        out.push('\n');
        out.push_str(&table.evidence_close);
    }
    out
}

fn render_document(out: &mut String, doc: &Document, table: &TokenTable) {
    out.push_str("Title: ");
    out.push_str(&escape(&doc.title, table));
    out.push_str("\nSnippet: ");
    out.push_str(&escape(&doc.snippet, table));
    out.push_str("\nSource: ");
    out.push_str(&escape(&doc.locator, table));
    out.push_str("\nScore: ");
    // `{}` on f64 is the shortest representation that parses back exactly.
    out.push_str(&format!("{}", doc.score));
}
