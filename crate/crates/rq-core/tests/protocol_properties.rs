//! Property tests over the control-token grammar.

use proptest::prelude::*;
use rq_core::protocol::{escape, parse, render, unescape, TokenTable};
use rq_core::testing;

proptest! {
    /// Unescaping undoes escaping for arbitrary payload text.
    #[test]
    fn unescape_inverts_escape(s in "\\PC*") {
        let table = TokenTable::default();
        prop_assert_eq!(unescape(&escape(&s, &table)), s);
    }

    /// Escape is canonical on its own image: escape(unescape(e)) == e for
    /// any e produced by escape.
    #[test]
    fn escape_is_canonical_on_escaped_text(s in "\\PC*") {
        let table = TokenTable::default();
        let escaped = escape(&s, &table);
        prop_assert_eq!(escape(&unescape(&escaped), &table), escaped.clone());
    }

    /// Escaped payloads never contain an unescaped control token.
    #[test]
    fn control_tokens_never_survive_escaping(s in "\\PC*", inject in 0usize..7) {
        let table = TokenTable::default();
        let tokens = [
            "[S_REWRITE]", "[S_DECOMPOSE]", "[S_DISAMBIGUATE]", "[A_RESPONSE]",
            "[R_EVIDENCE]", "[/R_EVIDENCE]", "[EOS]",
        ];
        let payload = format!("{s}{}{s}", tokens[inject]);
        let escaped = escape(&payload, &table);
        // A parse of the escaped payload as a full trajectory must not see
        // any structure; it fails with MissingEnd, never with a token in
        // the wrong place.
        prop_assert_eq!(
            parse(&escaped, &table).unwrap_err(),
            rq_core::protocol::ProtocolError::MissingEnd
        );
    }
}

#[test]
fn seeded_random_round_trips() {
    let table = TokenTable::default();
    let mut rng = testing::rng(0xC0FFEE);
    for i in 0..300 {
        let t = testing::random_trajectory(&mut rng);
        let rendered = render(&t, &table).unwrap_or_else(|e| panic!("render {i}: {e}"));
        let back = parse(&rendered, &table).unwrap_or_else(|e| panic!("parse {i}: {e}\n{rendered}"));
        assert!(back.structurally_eq(&t), "case {i}:\n{rendered}");
    }
}

#[test]
fn render_is_injective_on_distinct_trajectories() {
    let table = TokenTable::default();
    let mut rng = testing::rng(77);
    let trajectories: Vec<_> = (0..120).map(|_| testing::random_trajectory(&mut rng)).collect();
    let rendered: Vec<String> = trajectories
        .iter()
        .map(|t| render(t, &table).unwrap())
        .collect();
    for i in 0..trajectories.len() {
        for j in (i + 1)..trajectories.len() {
            if !trajectories[i].structurally_eq(&trajectories[j]) {
                assert_ne!(rendered[i], rendered[j], "cases {i}/{j} collided");
            } else {
                assert_eq!(rendered[i], rendered[j]);
            }
        }
    }
}

#[test]
fn custom_token_table_round_trips() {
    let table = TokenTable {
        rewrite: "<rw>".into(),
        decompose: "<dc>".into(),
        disambiguate: "<da>".into(),
        answer: "<ans>".into(),
        evidence_open: "<ev>".into(),
        evidence_close: "</ev>".into(),
        end: "<end>".into(),
    };
    table.check().unwrap();
    let mut rng = testing::rng(5);
    for _ in 0..100 {
        let t = testing::random_trajectory(&mut rng);
        let rendered = render(&t, &table).unwrap();
        let back = parse(&rendered, &table).unwrap();
        assert!(back.structurally_eq(&t));
    }
}
