use std::path::Path;
use std::sync::Arc;

use clarisim::conversation::ConversationHistory;
use clarisim::corpus::{load_single_turn, InformationNeed, LoadMode, QAExample};
use clarisim::decoding::{sample, DecodingParams, NextTokenDistribution};
use clarisim::promptcodec::{encode_multi, SpecialMarkers};
use clarisim::simulator::{open_session, AnswerBackend, NGramBackend, RuleBasedBackend, RuleConfig};
use clarisim::text::{normalize_key, tokenize};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 12] =
    ["maps", "europe", "printable", "kids", "pages", "diet", "teen", "plan", "cheap", "flights", "june", "paris"];

fn phrase(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(&WORDS[..]), 1..=max).prop_map(|w| w.join(" "))
}

fn need() -> impl Strategy<Value = InformationNeed> {
    (phrase(2), phrase(6)).prop_map(|(q, f)| InformationNeed::new("1", "F1", &q, &f).unwrap())
}

#[derive(Debug, Clone)]
enum Op {
    Ask(String),
    Record(String, String),
    Reset,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => phrase(5).prop_map(|q| Op::Ask(format!("do you want {q}?"))),
        2 => (phrase(4), phrase(3)).prop_map(|(q, a)| Op::Record(q, a)),
        1 => Just(Op::Reset),
    ]
}

fn fixture_examples() -> Vec<QAExample> {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/single_turn_sample.tsv");
    load_single_turn(&p, LoadMode::Strict).unwrap().items
}

proptest! {
    #[test]
    fn history_alternates_after_every_operation(n in need(), ops in prop::collection::vec(op(), 1..12)) {
        let backend: Arc<dyn AnswerBackend> = Arc::new(RuleBasedBackend::new(RuleConfig::default()));
        let mut s = open_session(n, backend, DecodingParams::default()).unwrap();
        for o in ops {
            match o {
                Op::Ask(q) => { s.answer(&q).unwrap(); }
                Op::Record(q, a) => s.record_turn(&q, &a).unwrap(),
                Op::Reset => s.reset(),
            }
            prop_assert!(s.history().validate().is_ok());
            prop_assert_eq!(s.history().initial_query(), Some(s.need().query.as_str()));
        }
    }

    #[test]
    fn rule_answers_never_leak_the_whole_need(n in need(), q in phrase(6), prior in prop::option::of((phrase(4), phrase(3)))) {
        let cfg = RuleConfig::default();
        let backend = RuleBasedBackend::new(cfg.clone());
        let mut h = ConversationHistory::new(n.query.clone());
        if let Some((pq, pa)) = &prior {
            h.push_question(pq.clone()).unwrap();
            h.push_answer(pa.clone()).unwrap();
        }
        let question = format!("are you looking for {q}?");
        let a = backend.respond(&n, &h, &question);
        let own = a.strip_prefix("yes, ").or_else(|| a.strip_prefix("no, i want "));
        if let Some(kw) = own {
            prop_assert!(tokenize(kw).len() <= cfg.keyword_count);
            prop_assert!(!normalize_key(kw).contains(&normalize_key(&n.facet_desc)));
        }
    }

    #[test]
    fn classification_is_pure(n in need(), q in phrase(6), prior in prop::option::of(phrase(4))) {
        let backend = RuleBasedBackend::new(RuleConfig::default());
        let mut h = ConversationHistory::new(n.query.clone());
        if let Some(pq) = &prior {
            h.push_question(pq.clone()).unwrap();
            h.push_answer("yes").unwrap();
        }
        let snapshot = h.clone();
        let first = backend.classify(&n, &h, &q);
        prop_assert_eq!(backend.classify(&n, &h, &q), first);
        prop_assert_eq!(h, snapshot);
    }

    #[test]
    fn histories_compose_turn_by_turn(
        n in need(),
        pairs in prop::collection::vec((phrase(4), phrase(3)), 1..=3),
        q in phrase(4),
        a in phrase(3),
    ) {
        let m = SpecialMarkers::default();
        let build = |ps: &[(String, String)]| {
            let mut h = ConversationHistory::new(n.query.clone());
            for (x, y) in ps {
                h.push_question(x.clone()).unwrap();
                h.push_answer(y.clone()).unwrap();
            }
            h
        };
        let (last_q, last_a) = pairs.last().unwrap();
        let prefix = encode_multi(&n, &build(&pairs[..pairs.len() - 1]), last_q, Some(last_a), &m).unwrap().text;
        let full = encode_multi(&n, &build(&pairs), &q, Some(&a), &m).unwrap().text;
        let head = prefix.strip_suffix(&format!(" [bos] {last_a} [eos]")).unwrap();
        prop_assert_eq!(full, format!("{head} [user] {last_a} [system] {q} [bos] {a} [eos]"));
    }

    #[test]
    fn top_k_one_samples_the_argmax(weights in prop::collection::vec(0.01f64..1.0, 2..10), seed in any::<u64>()) {
        let vocab: Vec<String> = (0..weights.len()).map(|i| format!("w{i}")).collect();
        let d = NextTokenDistribution::from_weights(vocab, weights).unwrap();
        let params = DecodingParams { top_k: 1, temperature: 1.3, ..DecodingParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            prop_assert_eq!(sample(&d, &params, &mut rng).unwrap(), d.argmax());
        }
    }
}

#[test]
fn ngram_answers_are_reproducible_for_a_seed() {
    let examples = fixture_examples();
    let backend: Arc<dyn AnswerBackend> =
        Arc::new(NGramBackend::train(&examples, &[], 3, 0.1, SpecialMarkers::default()).unwrap());
    let run = |seed: u64| {
        let mut s = open_session(examples[0].need.clone(), backend.clone(), DecodingParams::default().with_seed(seed)).unwrap();
        (0..3).map(|i| s.answer(&format!("question number {i}?")).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(5), run(5));
    let distinct: std::collections::BTreeSet<Vec<String>> = (0..8).map(run).collect();
    assert!(distinct.len() > 1, "seed has no effect");
}
