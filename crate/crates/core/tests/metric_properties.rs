use std::collections::HashMap;

use clarisim::nlgmetrics::{
    bleu_n, corpus_bleu, embedding_avg_cs, evaluate_corpus, lcs_len, rouge_l, BleuMode, TokenizedPair,
    WordEmbeddingTable,
};
use proptest::prelude::*;

const VOCAB: [&str; 6] = ["yes", "no", "maps", "of", "europe", "kids"];

fn tokens(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(&VOCAB[..]).prop_map(str::to_string), 1..=max)
}

fn pair(h: Vec<String>, r: Vec<String>) -> TokenizedPair {
    TokenizedPair { hypothesis: h, reference: r }
}

/// Exhaustive n-gram dictionaries over both sides.
fn dict_precision(h: &[String], r: &[String], n: usize) -> (usize, usize) {
    let grams = |t: &[String]| -> HashMap<Vec<String>, usize> {
        let mut m = HashMap::new();
        for i in 0..t.len().saturating_sub(n - 1) {
            *m.entry(t[i..i + n].to_vec()).or_insert(0) += 1;
        }
        m
    };
    let (hd, rd) = (grams(h), grams(r));
    let clipped = hd.iter().map(|(g, c)| (*c).min(*rd.get(g).unwrap_or(&0))).sum();
    (clipped, hd.values().sum())
}

fn oracle_bleu(h: &[String], r: &[String], n: usize) -> f64 {
    let order = n.min(h.len());
    let logs: f64 = (1..=order)
        .map(|k| {
            let (m, t) = dict_precision(h, r, k);
            if m == 0 { (1e-9 / t as f64).ln() } else { (m as f64 / t as f64).ln() }
        })
        .sum();
    let bp = if h.len() >= r.len() { 1.0 } else { (1.0 - r.len() as f64 / h.len() as f64).exp() };
    bp * (logs / order as f64).exp()
}

/// Textbook quadratic LCS table, filled from the end.
fn oracle_lcs(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in (0..a.len()).rev() {
        for j in (0..b.len()).rev() {
            t[i][j] = if a[i] == b[j] { 1 + t[i + 1][j + 1] } else { t[i + 1][j].max(t[i][j + 1]) };
        }
    }
    t[0][0]
}

fn relabel(t: &[String]) -> Vec<String> {
    t.iter().map(|w| format!("x{}x", w.chars().rev().collect::<String>())).collect()
}

fn table() -> WordEmbeddingTable {
    let mut t = WordEmbeddingTable::new(3).unwrap();
    for (i, w) in VOCAB.iter().enumerate() {
        let x = i as f64;
        t.insert(*w, vec![x.sin(), (2.0 * x).cos(), 0.5 - x / 7.0]).unwrap();
    }
    t
}

proptest! {
    #[test]
    fn bleu_matches_dictionary_oracle(h in tokens(9), r in tokens(9), n in 1usize..=3) {
        let p = pair(h.clone(), r.clone());
        prop_assert!((bleu_n(&p, n) - oracle_bleu(&h, &r, n)).abs() < 1e-9);
    }

    #[test]
    fn lcs_matches_quadratic_oracle(a in tokens(10), b in tokens(10)) {
        prop_assert_eq!(lcs_len(&a, &b), oracle_lcs(&a, &b));
    }

    #[test]
    fn relabeling_tokens_keeps_scores(h in tokens(8), r in tokens(8)) {
        let p = pair(h.clone(), r.clone());
        let q = pair(relabel(&h), relabel(&r));
        for n in 1..=3 {
            prop_assert_eq!(bleu_n(&p, n), bleu_n(&q, n));
        }
        prop_assert_eq!(rouge_l(&p), rouge_l(&q));
    }

    #[test]
    fn rouge_is_symmetric(h in tokens(8), r in tokens(8)) {
        prop_assert!((rouge_l(&pair(h.clone(), r.clone())) - rouge_l(&pair(r, h))).abs() < 1e-12);
    }

    #[test]
    fn duplicating_both_sides_keeps_embedding_score(h in tokens(6), r in tokens(6)) {
        let t = table();
        let twice = |v: &Vec<String>| v.iter().chain(v.iter()).cloned().collect::<Vec<_>>();
        let a = embedding_avg_cs(&pair(h.clone(), r.clone()), &t);
        let b = embedding_avg_cs(&pair(twice(&h), twice(&r)), &t);
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn scores_are_bounded(h in tokens(8), r in tokens(8)) {
        let p = pair(h, r);
        for v in [bleu_n(&p, 1), bleu_n(&p, 2), bleu_n(&p, 3), rouge_l(&p)] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
        prop_assert!((-1.0..=1.0).contains(&embedding_avg_cs(&p, &table())));
    }

    #[test]
    fn identical_texts_score_one(h in tokens(8)) {
        let p = pair(h.clone(), h);
        for n in 1..=4 {
            prop_assert!((bleu_n(&p, n) - 1.0).abs() < 1e-12);
        }
        prop_assert!((rouge_l(&p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_pair_corpus_bleu_is_sentence_bleu(h in tokens(8), r in tokens(8), n in 1usize..=3) {
        let p = pair(h, r);
        prop_assert!((corpus_bleu(std::slice::from_ref(&p), n) - bleu_n(&p, n)).abs() < 1e-12);
    }
}

#[test]
fn bleu_is_asymmetric() {
    let short = pair(vec!["maps".into()], vec!["maps".into(), "of".into(), "europe".into()]);
    let long = pair(short.reference.clone(), short.hypothesis.clone());
    assert!((bleu_n(&short, 1) - (1.0f64 - 3.0).exp()).abs() < 1e-12);
    assert!((bleu_n(&long, 1) - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn corpus_report_macro_averages_examples() {
    let hyps: Vec<(String, String)> =
        [("a", "yes maps of europe"), ("b", "no"), ("c", "kids")].iter().map(|(i, t)| (i.to_string(), t.to_string())).collect();
    let refs: Vec<(String, String)> =
        [("a", "yes maps"), ("b", "no kids"), ("c", "kids")].iter().map(|(i, t)| (i.to_string(), t.to_string())).collect();
    let report = evaluate_corpus(&hyps, &refs, Some(&table()), BleuMode::SentenceMean).unwrap();
    let mean = |f: fn(&clarisim::nlgmetrics::ExampleScores) -> f64| report.examples.iter().map(f).sum::<f64>() / 3.0;
    assert!((report.means.bleu2 - mean(|e| e.bleu2)).abs() < 1e-12);
    assert!((report.means.rouge_l - mean(|e| e.rouge_l)).abs() < 1e-12);
    let misaligned = [("z".to_string(), "yes".to_string())];
    assert!(evaluate_corpus(&misaligned, &refs[..1], None, BleuMode::Corpus).is_err());
}
