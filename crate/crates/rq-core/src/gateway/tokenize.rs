//! Whitespace-preserving token split.
//!
//! These are protocol-level tokens, not subword units: each token is a
//! non-whitespace run with its leading whitespace attached, so that the
//! concatenation of the tokens reproduces the text byte-for-byte.

/// Split `text` so that `split_tokens(text).concat() == text`.
///
/// A new token starts at each whitespace run, so whitespace leads the word
/// it precedes; trailing whitespace sticks to the final token.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut tokens: Vec<String> = Vec::new();
    let mut prev_ws = false;
    for ch in text.chars() {
        let is_ws = ch.is_whitespace();
        if tokens.is_empty() || (is_ws && !prev_ws) {
            tokens.push(String::new());
        }
        tokens.last_mut().unwrap().push(ch);
        prev_ws = is_ws;
    }
    if tokens.len() >= 2 && tokens.last().unwrap().chars().all(char::is_whitespace) {
        let tail = tokens.pop().unwrap();
        tokens.last_mut().unwrap().push_str(&tail);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::split_tokens;

    #[test]
    fn concatenation_reproduces_text() {
        for text in ["", "one", "one two", " leading", "trail ", "a  b\n\nc", "  "] {
            assert_eq!(split_tokens(text).concat(), text, "{text:?}");
        }
    }

    #[test]
    fn token_boundaries() {
        assert_eq!(split_tokens("foo bar"), vec!["foo", " bar"]);
        assert_eq!(split_tokens(" x y "), vec![" x", " y "]);
        assert_eq!(split_tokens("solo"), vec!["solo"]);
        assert!(split_tokens("").is_empty());
    }
}
