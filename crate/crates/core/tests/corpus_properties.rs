use std::path::Path;

use clarisim::corpus::{
    build_distractor_records, compute_stats, load_single_turn, parse_single_turn, polarity, sample_distractor,
    write_single_turn, InformationNeed, LoadMode, Polarity, QAExample,
};
use clarisim::promptcodec::{encode_single, SpecialMarkers};
use proptest::prelude::*;

const ANSWERS: [&str; 6] = ["yes, for kids", "No, I want plans", "maybe", "no", "Yes!", "i don't know"];

fn example() -> impl Strategy<Value = QAExample> {
    (0u8..3, 0u8..3, 0u8..4, prop::sample::select(&ANSWERS[..])).prop_map(|(t, f, q, a)| {
        let need = InformationNeed::new(&t.to_string(), &format!("F{f}"), "query", &format!("facet {t} {f}")).unwrap();
        QAExample::new(need, &format!("question {q}?"), a).unwrap()
    })
}

fn same_facet(a: &QAExample, b: &QAExample) -> bool {
    a.need.key() == b.need.key()
}

proptest! {
    #[test]
    fn stats_ignore_row_order(mut rows in prop::collection::vec(example(), 0..20), rot in 0usize..20) {
        let before = compute_stats(&rows);
        rows.reverse();
        let n = rows.len().max(1);
        rows.rotate_left(rot % n);
        prop_assert_eq!(compute_stats(&rows), before);
    }

    /// Exhaustive check over small pools: the pick is from another facet and
    /// flips polarity whenever an opposite-polarity candidate exists.
    #[test]
    fn distractor_respects_facet_and_polarity(target in example(), pool in prop::collection::vec(example(), 1..10), seed in any::<u64>()) {
        let others: Vec<&QAExample> = pool.iter().filter(|e| !same_facet(e, &target)).collect();
        match sample_distractor(&target, &pool, seed) {
            Err(_) => prop_assert!(others.is_empty()),
            Ok(d) => {
                prop_assert!(others.iter().any(|e| e.answer == d));
                let want = match polarity(&target.answer) {
                    Polarity::Yes => Some(Polarity::No),
                    Polarity::No => Some(Polarity::Yes),
                    Polarity::Neutral => None,
                };
                if let Some(p) = want {
                    if others.iter().any(|e| polarity(&e.answer) == p) {
                        prop_assert_eq!(polarity(&d), p);
                    }
                }
                prop_assert_eq!(sample_distractor(&target, &pool, seed).unwrap(), d);
            }
        }
    }

    #[test]
    fn serialize_then_load_round_trips(rows in prop::collection::vec(example(), 0..15)) {
        let mut buf = Vec::new();
        write_single_turn(&rows, &mut buf).unwrap();
        let raw = String::from_utf8(buf).unwrap();
        let back = parse_single_turn(&raw, Path::new("mem.tsv"), LoadMode::Strict).unwrap();
        prop_assert_eq!(back.items, rows);
    }
}

#[test]
fn distractor_rows_encode_both_answers() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/single_turn_sample.tsv");
    let examples = load_single_turn(&fixture, LoadMode::Strict).unwrap().items;
    let m = SpecialMarkers::default();
    let rows = build_distractor_records(&examples, 7, &m).unwrap();
    assert_eq!(rows.len(), examples.len());
    for (r, e) in rows.iter().zip(&examples) {
        assert_eq!(r.target_input, encode_single(&e.need, &e.question, Some(&e.answer), &m).unwrap().text);
        assert_eq!(r.distractor_input, encode_single(&e.need, &e.question, Some(&r.distractor), &m).unwrap().text);
        assert!(examples.iter().any(|o| o.answer == r.distractor && o.need.key() != e.need.key()));
    }
    assert_eq!(rows, build_distractor_records(&examples, 7, &m).unwrap());
}

#[test]
fn fixture_statistics() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/single_turn_sample.tsv");
    let s = compute_stats(&load_single_turn(&fixture, LoadMode::Strict).unwrap().items);
    assert_eq!((s.n_topics, s.n_facets, s.n_questions, s.n_qa_pairs), (4, 7, 8, 12));
}
