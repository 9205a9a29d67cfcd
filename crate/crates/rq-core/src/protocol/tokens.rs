//! Control-token table and the payload escaping scheme.
//!
//! The grammar, not the spelling, carries the semantics: every token surface
//! form is configurable so the protocol can match any checkpoint's
//! vocabulary. Escaping backslash-prefixes anything in payload text that
//! could be mistaken for structure: the configured tokens themselves, any
//! marker in the reserved `[S_*] [A_*] [R_*] [/R_*] [EOS]` namespace, plus
//! raw backslashes and newlines (newlines because evidence blocks are
//! line-oriented).

use super::{ProtocolError, RefinementAction};
use serde::{Deserialize, Serialize};

/// Structural role of a control token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlToken {
    Action(RefinementAction),
    Answer,
    EvidenceOpen,
    EvidenceClose,
    End,
}

/// Surface forms of the seven control tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenTable {
    pub rewrite: String,
    pub decompose: String,
    pub disambiguate: String,
    pub answer: String,
    pub evidence_open: String,
    pub evidence_close: String,
    pub end: String,
}

impl Default for TokenTable {
    fn default() -> Self {
        Self {
            rewrite: "[S_REWRITE]".into(),
            decompose: "[S_DECOMPOSE]".into(),
            disambiguate: "[S_DISAMBIGUATE]".into(),
            answer: "[A_RESPONSE]".into(),
            evidence_open: "[R_EVIDENCE]".into(),
            evidence_close: "[/R_EVIDENCE]".into(),
            end: "[EOS]".into(),
        }
    }
}

impl TokenTable {
    /// Token surface forms may not contain backslash or newline; those
    /// characters are claimed by the escape scheme.
    pub fn check(&self) -> Result<(), ProtocolError> {
        for (form, _) in self.entries() {
            if form.is_empty() || form.contains('\\') || form.contains('\n') {
                return Err(ProtocolError::InvariantViolation(format!(
                    "control token {form:?} is empty or contains a reserved character"
                )));
            }
        }
        Ok(())
    }

    pub fn action_token(&self, action: RefinementAction) -> &str {
        match action {
            RefinementAction::Rewrite => &self.rewrite,
            RefinementAction::Decompose => &self.decompose,
            RefinementAction::Disambiguate => &self.disambiguate,
            RefinementAction::Answer => &self.answer,
        }
    }

    /// All (surface form, role) pairs.
    pub fn entries(&self) -> [(&str, ControlToken); 7] {
        [
            (&self.rewrite, ControlToken::Action(RefinementAction::Rewrite)),
            (
                &self.decompose,
                ControlToken::Action(RefinementAction::Decompose),
            ),
            (
                &self.disambiguate,
                ControlToken::Action(RefinementAction::Disambiguate),
            ),
            (&self.answer, ControlToken::Answer),
            (&self.evidence_open, ControlToken::EvidenceOpen),
            (&self.evidence_close, ControlToken::EvidenceClose),
            (&self.end, ControlToken::End),
        ]
    }

    /// Longest table token starting at `text[pos..]`, if any. Longest-match
    /// keeps prefix-overlapping custom spellings unambiguous.
    fn match_at(&self, text: &str, pos: usize) -> Option<(ControlToken, usize)> {
        let rest = &text[pos..];
        self.entries()
            .into_iter()
            .filter(|(form, _)| rest.starts_with(*form))
            .max_by_key(|(form, _)| form.len())
            .map(|(form, tok)| (tok, form.len()))
    }
}

/// Length of a reserved-namespace marker starting at `text[pos..]`, if one
/// is there: `[` + optional `/` + uppercase identifier + `]`, where the
/// identifier starts with `S_`, `A_`, or `R_`, or is exactly `EOS`.
fn reserved_marker_len(text: &str, pos: usize) -> Option<usize> {
    let rest = text[pos..].as_bytes();
    if rest.first() != Some(&b'[') {
        return None;
    }
    let mut i = 1;
    if rest.get(i) == Some(&b'/') {
        i += 1;
    }
    let body_start = i;
    while let Some(&c) = rest.get(i) {
        if c.is_ascii_uppercase() || c == b'_' || c.is_ascii_digit() {
            i += 1;
        } else {
            break;
        }
    }
    if rest.get(i) != Some(&b']') || i == body_start {
        return None;
    }
    let body = &text[pos + body_start..pos + i];
    let reserved =
        body.starts_with("S_") || body.starts_with("A_") || body.starts_with("R_") || body == "EOS";
    reserved.then_some(i + 1)
}

/// Escape payload text so [`parse`](super::parse) can never mistake it for
/// structure under the given token table.
pub fn escape(payload: &str, table: &TokenTable) -> String {
    let mut out = String::with_capacity(payload.len());
    let mut pos = 0;
    while pos < payload.len() {
        let ch = payload[pos..].chars().next().unwrap();
        if ch == '\\' {
            out.push_str("\\\\");
            pos += 1;
        } else if ch == '\n' {
            out.push_str("\\n");
            pos += 1;
        } else if let Some((_, len)) = table.match_at(payload, pos) {
            out.push('\\');
            out.push_str(&payload[pos..pos + len]);
            pos += len;
        } else if let Some(len) = reserved_marker_len(payload, pos) {
            out.push('\\');
            out.push_str(&payload[pos..pos + len]);
            pos += len;
        } else {
            out.push(ch);
            pos += ch.len_utf8();
        }
    }
    out
}

/// Inverse of [`escape`]. A backslash revives the following character
/// (`\n` revives a newline); a trailing lone backslash is kept as-is.
pub fn unescape(escaped: &str) -> String {
    let mut out = String::with_capacity(escaped.len());
    let mut chars = escaped.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// One piece of a lexed serialized trajectory: raw (still-escaped) payload
/// text, or a recognized control token.
#[derive(Debug, Clone, PartialEq)]
pub(super) enum Piece {
    Text(String),
    Token(ControlToken),
}

/// Split serialized text into payload segments and control tokens.
///
/// Escape sequences are skipped atomically, so escaped token spellings stay
/// inside payload segments (still escaped; fields unescape individually
/// after structural splitting). Anything unescaped in the reserved
/// namespace that the table does not know is an [`UnknownToken`] error.
///
/// [`UnknownToken`]: ProtocolError::UnknownToken
pub(super) fn lex(text: &str, table: &TokenTable) -> Result<Vec<Piece>, ProtocolError> {
    let mut pieces = Vec::new();
    let mut current = String::new();
    let mut pos = 0;
    while pos < text.len() {
        let ch = text[pos..].chars().next().unwrap();
        if ch == '\\' {
            // Keep the whole escape sequence in the raw segment.
            current.push('\\');
            pos += 1;
            if let Some(next) = text[pos..].chars().next() {
                current.push(next);
                pos += next.len_utf8();
            }
        } else if let Some((tok, len)) = table.match_at(text, pos) {
            if !current.is_empty() {
                pieces.push(Piece::Text(std::mem::take(&mut current)));
            }
            pieces.push(Piece::Token(tok));
            pos += len;
        } else if let Some(len) = reserved_marker_len(text, pos) {
            return Err(ProtocolError::UnknownToken(text[pos..pos + len].to_string()));
        } else {
            current.push(ch);
            pos += ch.len_utf8();
        }
    }
    if !current.is_empty() {
        pieces.push(Piece::Text(current));
    }
    Ok(pieces)
}
