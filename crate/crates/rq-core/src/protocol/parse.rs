//! Inverse of rendering: serialized text back to a structured trajectory.

use super::render::DOC_DELIMITER;
use super::tokens::{lex, unescape, ControlToken, Piece, TokenTable};
use super::{Document, ProtocolError, RefinementAction, SearchStep, Trajectory};

/// Parse a complete serialized trajectory.
///
/// Serialized text carries no probability data, so `generated_tokens` comes
/// back empty and `answer_start` zero. Step turns and document ranks are
/// positional.
pub fn parse(text: &str, table: &TokenTable) -> Result<Trajectory, ProtocolError> {
    let pieces = lex(text, table)?;
    let mut iter = pieces.into_iter().peekable();

    let input_raw = match iter.peek() {
        Some(Piece::Text(_)) => match iter.next() {
            Some(Piece::Text(t)) => t,
            _ => unreachable!(),
        },
        _ => String::new(),
    };
    let input = unescape(strip_trailing_newline(&input_raw));

    let mut steps = Vec::new();

    let final_answer = loop {
        let token = match iter.next() {
            Some(Piece::Token(tok)) => tok,
            Some(Piece::Text(_)) => unreachable!("lexer merges adjacent text"),
            None => return Err(ProtocolError::MissingEnd),
        };
        match token {
            ControlToken::Action(action) => {
                let query_raw = take_text(&mut iter);
                match iter.next() {
                    Some(Piece::Token(ControlToken::EvidenceOpen)) => {}
                    _ => {
                        return Err(ProtocolError::MalformedSequence(
                            "refinement action without an evidence block".into(),
                        ))
                    }
                }
                let body_raw = take_text(&mut iter);
                match iter.next() {
                    Some(Piece::Token(ControlToken::EvidenceClose)) => {}
                    _ => return Err(ProtocolError::UnterminatedEvidence),
                }
                let documents = parse_evidence_body(&body_raw)?;
                steps.push(SearchStep {
                    turn: steps.len() + 1,
                    action,
                    refined_query: unescape(strip_field(&query_raw)),
                    documents,
                });
                expect_separator(&mut iter)?;
            }
            ControlToken::Answer => {
                let answer_raw = take_text(&mut iter);
                match iter.next() {
                    Some(Piece::Token(ControlToken::End)) => {}
                    Some(_) => {
                        return Err(ProtocolError::MalformedSequence(
                            "answer not followed by the end token".into(),
                        ))
                    }
                    None => return Err(ProtocolError::MissingEnd),
                }
                break unescape(strip_field(&answer_raw));
            }
            ControlToken::End => return Err(ProtocolError::MissingAnswer),
            ControlToken::EvidenceOpen | ControlToken::EvidenceClose => {
                return Err(ProtocolError::MalformedSequence(
                    "evidence token outside a refinement step".into(),
                ))
            }
        }
    };

    // Only trailing whitespace may follow the end token.
    match iter.next() {
        None => {}
        Some(Piece::Text(t)) if t.trim().is_empty() && iter.peek().is_none() => {}
        Some(_) => {
            return Err(ProtocolError::MalformedSequence(
                "content after the end token".into(),
            ))
        }
    }

    Ok(Trajectory {
        input,
        steps,
        final_answer,
        generated_tokens: Vec::new(),
        answer_start: 0,
        evidence_token_spans: Vec::new(),
    })
}

/// What one generator continuation asked the engine to do.
#[derive(Debug, Clone, PartialEq)]
pub enum ContinuationAction {
    /// A refinement action and the query to retrieve for.
    Refine {
        action: RefinementAction,
        query: String,
    },
    /// A final answer. `payload_offset` and `payload_len` delimit the raw
    /// (still escaped) answer bytes within the continuation, used to locate
    /// the answer span inside the continuation's token list.
    Answer {
        text: String,
        payload_offset: usize,
        payload_len: usize,
    },
}

/// Parse a single generator continuation: one control token plus its
/// payload. Continuations never carry evidence blocks — the engine inserts
/// retrieved documents itself.
pub fn parse_continuation(
    text: &str,
    table: &TokenTable,
) -> Result<ContinuationAction, ProtocolError> {
    let pieces = lex(text, table)?;
    let mut iter = pieces.into_iter().peekable();

    let mut offset = 0;
    if let Some(Piece::Text(t)) = iter.peek() {
        if !t.trim().is_empty() {
            return Err(ProtocolError::MalformedSequence(
                "continuation must begin with a control token".into(),
            ));
        }
        offset += t.len();
        iter.next();
    }

    let token = match iter.next() {
        Some(Piece::Token(tok)) => tok,
        _ => {
            return Err(ProtocolError::MalformedSequence(
                "continuation must begin with a control token".into(),
            ))
        }
    };

    match token {
        ControlToken::Action(action) if !action.is_terminal() => {
            let query_raw = take_text(&mut iter);
            if iter.next().is_some() {
                return Err(ProtocolError::MalformedSequence(
                    "refinement continuation carries extra control tokens".into(),
                ));
            }
            let query = unescape(strip_payload(&query_raw));
            if query.is_empty() {
                return Err(ProtocolError::InvariantViolation(
                    "continuation has an empty refined query".into(),
                ));
            }
            Ok(ContinuationAction::Refine { action, query })
        }
        ControlToken::Answer => {
            offset += table.answer.len();
            let answer_raw = take_text(&mut iter);
            match iter.next() {
                None | Some(Piece::Token(ControlToken::End)) => {}
                Some(_) => {
                    return Err(ProtocolError::MalformedSequence(
                        "answer continuation carries extra control tokens".into(),
                    ))
                }
            }
            if let Some(Piece::Text(t)) = iter.next() {
                if !t.trim().is_empty() {
                    return Err(ProtocolError::MalformedSequence(
                        "content after the end token".into(),
                    ));
                }
            }
            if answer_raw.starts_with(' ') {
                offset += 1;
            }
            let stripped = strip_payload(&answer_raw);
            Ok(ContinuationAction::Answer {
                text: unescape(stripped),
                payload_offset: offset,
                payload_len: stripped.len(),
            })
        }
        _ => Err(ProtocolError::MalformedSequence(
            "continuation must begin with an action or answer token".into(),
        )),
    }
}

/// Parse a completion produced with the answer token already forced into
/// the prompt: just the answer text, optionally followed by the end token.
/// A completion that repeats the answer token is also accepted.
pub fn parse_forced_answer(
    text: &str,
    table: &TokenTable,
) -> Result<ContinuationAction, ProtocolError> {
    let pieces = lex(text, table)?;
    if matches!(pieces.first(), Some(Piece::Token(ControlToken::Answer)))
        || matches!(
            (pieces.first(), pieces.get(1)),
            (Some(Piece::Text(t)), Some(Piece::Token(ControlToken::Answer))) if t.trim().is_empty()
        )
    {
        return parse_continuation(text, table);
    }

    let mut iter = pieces.into_iter().peekable();
    let answer_raw = take_text(&mut iter);
    match iter.next() {
        None | Some(Piece::Token(ControlToken::End)) => {}
        Some(_) => {
            return Err(ProtocolError::MalformedSequence(
                "forced answer carries unexpected control tokens".into(),
            ))
        }
    }
    if let Some(Piece::Text(t)) = iter.next() {
        if !t.trim().is_empty() {
            return Err(ProtocolError::MalformedSequence(
                "content after the end token".into(),
            ));
        }
    }
    let offset = usize::from(answer_raw.starts_with(' '));
    let stripped = strip_payload(&answer_raw);
    Ok(ContinuationAction::Answer {
        text: unescape(stripped),
        payload_offset: offset,
        payload_len: stripped.len(),
    })
}

/// Next piece if it is text, else empty.
fn take_text(iter: &mut std::iter::Peekable<std::vec::IntoIter<Piece>>) -> String {
    match iter.peek() {
        Some(Piece::Text(_)) => match iter.next() {
            Some(Piece::Text(t)) => t,
            _ => unreachable!(),
        },
        _ => String::new(),
    }
}

/// Between an evidence close and the next token only structural whitespace
/// is allowed; free-form rationale between steps is not part of the grammar.
fn expect_separator(
    iter: &mut std::iter::Peekable<std::vec::IntoIter<Piece>>,
) -> Result<(), ProtocolError> {
    if let Some(Piece::Text(t)) = iter.peek() {
        if !t.trim().is_empty() {
            return Err(ProtocolError::MalformedSequence(
                "free-form text between protocol elements".into(),
            ));
        }
        iter.next();
    }
    Ok(())
}

/// Strip the structural whitespace render wraps around a field: one leading
/// space (after a token) and one trailing newline (before the next token).
fn strip_field(raw: &str) -> &str {
    let s = raw.strip_prefix(' ').unwrap_or(raw);
    s.strip_suffix('\n').unwrap_or(s)
}

/// Field stripping for generator continuations: one leading space, then any
/// trailing whitespace a model may append.
fn strip_payload(raw: &str) -> &str {
    raw.strip_prefix(' ').unwrap_or(raw).trim_end()
}

fn strip_trailing_newline(raw: &str) -> &str {
    raw.strip_suffix('\n').unwrap_or(raw)
}

fn parse_evidence_body(body_raw: &str) -> Result<Vec<Document>, ProtocolError> {
    let body = body_raw.strip_prefix('\n').unwrap_or(body_raw);
    let body = body.strip_suffix('\n').unwrap_or(body);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    let delimiter = format!("\n{DOC_DELIMITER}\n");
    body.split(delimiter.as_str())
        .enumerate()
        .map(|(i, block)| parse_document(block, i + 1))
        .collect()
}

fn parse_document(block: &str, rank: usize) -> Result<Document, ProtocolError> {
    let mut lines = block.split('\n');
    let mut field = |prefix: &str| -> Result<String, ProtocolError> {
        lines
            .next()
            .and_then(|line| line.strip_prefix(prefix))
            .map(str::to_string)
            .ok_or_else(|| {
                ProtocolError::MalformedEvidence(format!("expected a `{prefix}` line"))
            })
    };
    let title = field("Title: ")?;
    let snippet = field("Snippet: ")?;
    let locator = field("Source: ")?;
    let score_text = field("Score: ")?;
    if lines.next().is_some() {
        return Err(ProtocolError::MalformedEvidence(
            "extra lines in document block".into(),
        ));
    }
    let score: f64 = score_text
        .parse()
        .map_err(|_| ProtocolError::MalformedEvidence(format!("bad score `{score_text}`")))?;
    Ok(Document {
        title: unescape(&title),
        snippet: unescape(&snippet),
        locator: unescape(&locator),
        rank,
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::render;

    fn table() -> TokenTable {
        TokenTable::default()
    }

    #[test]
    fn zero_step_round_trip() {
        let t = Trajectory::bare("Hello", "Hi there");
        let rendered = render(&t, &table()).unwrap();
        let back = parse(&rendered, &table()).unwrap();
        assert!(back.structurally_eq(&t));
        assert!(back.steps.is_empty());
        assert!(back.generated_tokens.is_empty());
        assert_eq!(back.answer_start, 0);
    }

    #[test]
    fn full_round_trip_with_awkward_payloads() {
        let t = Trajectory {
            input: "what about [S_REWRITE] literally\nand newlines?".into(),
            steps: vec![
                SearchStep::new(
                    1,
                    RefinementAction::Decompose,
                    "sub q with [EOS] inside",
                    vec![
                        Document::new("A\nTitle", "sni\\ppet [R_EVIDENCE]", "id-1", 1, 0.25),
                        Document::new("", "---", "http://x/y?z=1", 2, -3.5),
                    ],
                ),
                SearchStep::new(2, RefinementAction::Disambiguate, "which one?", vec![]),
            ],
            final_answer: "ans [A_RESPONSE] done".into(),
            ..Default::default()
        };
        let rendered = render(&t, &table()).unwrap();
        let back = parse(&rendered, &table()).unwrap();
        assert!(back.structurally_eq(&t), "{back:#?}");
    }

    #[test]
    fn unterminated_evidence() {
        let text = "q\n[S_REWRITE] better\n[R_EVIDENCE]\nTitle: t\nSnippet: s\nSource: d\nScore: 1";
        assert_eq!(
            parse(text, &table()).unwrap_err(),
            ProtocolError::UnterminatedEvidence
        );
    }

    #[test]
    fn end_before_answer() {
        assert_eq!(
            parse("q\n[EOS]", &table()).unwrap_err(),
            ProtocolError::MissingAnswer
        );
    }

    #[test]
    fn unknown_token() {
        assert_eq!(
            parse("q\n[S_SHRINK] w\n[A_RESPONSE] a\n[EOS]", &table()).unwrap_err(),
            ProtocolError::UnknownToken("[S_SHRINK]".into())
        );
    }

    #[test]
    fn missing_end() {
        assert_eq!(
            parse("q\n[A_RESPONSE] a", &table()).unwrap_err(),
            ProtocolError::MissingEnd
        );
    }

    #[test]
    fn rationale_between_steps_is_rejected() {
        let text = "q\n[S_REWRITE] w\n[R_EVIDENCE]\n[/R_EVIDENCE]\nthinking...\n[A_RESPONSE] a\n[EOS]";
        assert!(matches!(
            parse(text, &table()).unwrap_err(),
            ProtocolError::MalformedSequence(_)
        ));
    }

    #[test]
    fn continuation_refine() {
        let c = parse_continuation("[S_DECOMPOSE] who wrote it?", &table()).unwrap();
        assert_eq!(
            c,
            ContinuationAction::Refine {
                action: RefinementAction::Decompose,
                query: "who wrote it?".into()
            }
        );
    }

    #[test]
    fn continuation_answer_offset() {
        let c = parse_continuation("[A_RESPONSE] Paris\n[EOS]", &table()).unwrap();
        match c {
            ContinuationAction::Answer {
                text,
                payload_offset,
                payload_len,
            } => {
                assert_eq!(text, "Paris");
                assert_eq!(payload_offset, "[A_RESPONSE] ".len());
                assert_eq!(payload_len, "Paris".len());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn forced_answer_shapes() {
        for text in [" Berlin\n[EOS]", "Berlin", "[A_RESPONSE] Berlin\n[EOS]"] {
            match parse_forced_answer(text, &table()).unwrap() {
                ContinuationAction::Answer { text: answer, .. } => assert_eq!(answer, "Berlin"),
                other => panic!("unexpected {other:?}"),
            }
        }
        assert!(parse_forced_answer("x [R_EVIDENCE] y", &table()).is_err());
    }

    #[test]
    fn continuation_rejects_plain_text() {
        assert!(parse_continuation("no marker here", &table()).is_err());
    }

    #[test]
    fn continuation_rejects_empty_query() {
        assert!(matches!(
            parse_continuation("[S_REWRITE]   ", &table()).unwrap_err(),
            ProtocolError::InvariantViolation(_)
        ));
    }
}
