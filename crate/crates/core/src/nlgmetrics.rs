//! BLEU-n, ROUGE-L and embedding-average cosine over the shared tokenizer.

use std::collections::HashMap;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::text::tokenize;

/// Stands in for a zero n-gram match count.
pub const BLEU_EPSILON: f64 = 1e-9;
pub const MAX_BLEU_ORDER: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("record {index}: hypothesis id '{hyp_id}' does not match reference id '{ref_id}'")]
    Misaligned { index: usize, hyp_id: String, ref_id: String },
    #[error("embedding for '{token}' has dimension {found}, table dimension is {expected}")]
    Dimension { token: String, expected: usize, found: usize },
    #[error("embedding dimension must be at least 1")]
    ZeroDimension,
    #[error("no readable vectors in embedding file")]
    EmptyTable,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenizedPair {
    pub hypothesis: Vec<String>,
    pub reference: Vec<String>,
}

impl TokenizedPair {
    pub fn new(hypothesis: &str, reference: &str) -> Self {
        Self { hypothesis: tokenize(hypothesis), reference: tokenize(reference) }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// (clipped matches, hypothesis n-gram count) for order `n`.
fn clipped_matches(hyp: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matches = h.iter().map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0))).sum();
    (matches, hyp.len().saturating_sub(n - 1))
}

fn smoothed(matches: usize, total: usize) -> f64 {
    if matches == 0 {
        BLEU_EPSILON / total.max(1) as f64
    } else {
        matches as f64 / total as f64
    }
}

fn brevity_penalty(h: usize, r: usize) -> f64 {
    if h >= r {
        1.0
    } else {
        (1.0 - r as f64 / h as f64).exp()
    }
}

/// Sentence BLEU with orders `1..=min(n, |hyp|)`, epsilon smoothing for zero
/// matches and the standard brevity penalty.
///
/// # Panics
/// If `n` is 0.
pub fn bleu_n(pair: &TokenizedPair, n: usize) -> f64 {
    assert!(n >= 1, "BLEU order must be at least 1");
    let h = pair.hypothesis.len();
    if h == 0 {
        log::warn!("empty hypothesis scores BLEU 0");
        return 0.0;
    }
    let order = n.min(h);
    let log_sum: f64 = (1..=order)
        .map(|k| {
            let (m, t) = clipped_matches(&pair.hypothesis, &pair.reference, k);
            smoothed(m, t).ln()
        })
        .sum();
    brevity_penalty(h, pair.reference.len()) * (log_sum / order as f64).exp()
}

/// Corpus BLEU: match and length counts pooled over all pairs before the
/// precisions and brevity penalty are formed.
pub fn corpus_bleu(pairs: &[TokenizedPair], n: usize) -> f64 {
    assert!(n >= 1, "BLEU order must be at least 1");
    let h: usize = pairs.iter().map(|p| p.hypothesis.len()).sum();
    let r: usize = pairs.iter().map(|p| p.reference.len()).sum();
    if h == 0 {
        return 0.0;
    }
    let max_len = pairs.iter().map(|p| p.hypothesis.len()).max().unwrap_or(0);
    let order = n.min(max_len);
    let log_sum: f64 = (1..=order)
        .map(|k| {
            let (m, t) = pairs
                .iter()
                .map(|p| clipped_matches(&p.hypothesis, &p.reference, k))
                .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
            smoothed(m, t).ln()
        })
        .sum();
    brevity_penalty(h, r) * (log_sum / order as f64).exp()
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F1.
pub fn rouge_l(pair: &TokenizedPair) -> f64 {
    let (h, r) = (pair.hypothesis.len(), pair.reference.len());
    if h == 0 || r == 0 {
        log::warn!("empty side scores ROUGE-L 0");
        return 0.0;
    }
    let l = lcs_len(&pair.hypothesis, &pair.reference) as f64;
    let (p, rc) = (l / h as f64, l / r as f64);
    if p + rc == 0.0 {
        0.0
    } else {
        2.0 * p * rc / (p + rc)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WordEmbeddingTable {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadedTable {
    pub table: WordEmbeddingTable,
    pub skipped: usize,
}

impl WordEmbeddingTable {
    pub fn new(dimension: usize) -> Result<Self, MetricError> {
        if dimension == 0 {
            return Err(MetricError::ZeroDimension);
        }
        Ok(Self { dimension, vectors: HashMap::new() })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<(), MetricError> {
        let token = token.into();
        if vector.len() != self.dimension {
            return Err(MetricError::Dimension { token, expected: self.dimension, found: vector.len() });
        }
        self.vectors.insert(token, vector);
        Ok(())
    }

    /// Text format: a token followed by its whitespace-separated components
    /// on each line. An optional leading `<count> <dimension>` header is
    /// honored. Lines that do not parse or disagree on dimension are skipped
    /// and counted.
    pub fn load<R: BufRead>(input: R) -> Result<LoadedTable, MetricError> {
        let mut dimension: Option<usize> = None;
        let mut vectors = HashMap::new();
        let mut skipped = 0;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let rest: Vec<&str> = fields.collect();
            if i == 0 && rest.len() == 1 && token.parse::<usize>().is_ok() {
                if let Ok(d) = rest[0].parse::<usize>() {
                    dimension = Some(d);
                    continue;
                }
            }
            let parsed: Result<Vec<f64>, _> = rest.iter().map(|v| v.parse::<f64>()).collect();
            match parsed {
                Ok(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) && dimension.is_none_or(|d| d == v.len()) => {
                    dimension = Some(v.len());
                    vectors.insert(token.to_lowercase(), v);
                }
                _ => skipped += 1,
            }
        }
        if skipped > 0 {
            log::warn!("skipped {skipped} unreadable embedding lines");
        }
        let dimension = match dimension {
            Some(d) if !vectors.is_empty() => d,
            _ => return Err(MetricError::EmptyTable),
        };
        Ok(LoadedTable { table: WordEmbeddingTable { dimension, vectors }, skipped })
    }

    fn mean(&self, tokens: &[String]) -> Option<Vec<f64>> {
        let mut sum = vec![0.0; self.dimension];
        let mut n = 0usize;
        for t in tokens {
            if let Some(v) = self.vectors.get(t) {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
                n += 1;
            }
        }
        (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
    }
}

/// Cosine of the mean in-vocabulary vectors; `None` when either side has no
/// known token.
pub fn embedding_avg_cs_checked(pair: &TokenizedPair, table: &WordEmbeddingTable) -> Option<f64> {
    let a = table.mean(&pair.hypothesis)?;
    let b = table.mean(&pair.reference)?;
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Some(0.0);
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn embedding_avg_cs(pair: &TokenizedPair, table: &WordEmbeddingTable) -> f64 {
    embedding_avg_cs_checked(pair, table).unwrap_or_else(|| {
        log::warn!("a side has no in-vocabulary token; embedding score 0");
        0.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuMode {
    /// Mean of sentence-level scores.
    #[default]
    SentenceMean,
    /// Pooled corpus-level BLEU.
    Corpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub id: String,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    #[serde(rename = "embeddingAvgCS", skip_serializing_if = "Option::is_none")]
    pub embedding_avg_cs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanScores {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    #[serde(rename = "embeddingAvgCS", skip_serializing_if = "Option::is_none")]
    pub embedding_avg_cs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu_mode: BleuMode,
    pub examples: Vec<ExampleScores>,
    pub means: MeanScores,
    /// Pairs where a side had no in-vocabulary token.
    pub oov_pairs: usize,
}

/// Scores aligned `(id, text)` lists. With [`BleuMode::Corpus`] the BLEU
/// means are replaced by pooled corpus BLEU; per-example scores stay
/// sentence-level.
pub fn evaluate_corpus(
    hyps: &[(String, String)],
    refs: &[(String, String)],
    table: Option<&WordEmbeddingTable>,
    mode: BleuMode,
) -> Result<MetricReport, MetricError> {
    if hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch { hyps: hyps.len(), refs: refs.len() });
    }
    if let Some((index, ((h, _), (r, _)))) = hyps.iter().zip(refs).enumerate().find(|(_, ((h, _), (r, _)))| h != r) {
        return Err(MetricError::Misaligned { index, hyp_id: h.clone(), ref_id: r.clone() });
    }
    let pairs: Vec<TokenizedPair> = hyps.par_iter().zip(refs).map(|((_, h), (_, r))| TokenizedPair::new(h, r)).collect();
    let scored: Vec<(ExampleScores, bool)> = pairs
        .par_iter()
        .zip(hyps)
        .map(|(p, (id, _))| {
            let emb = table.map(|t| embedding_avg_cs_checked(p, t));
            let oov = matches!(emb, Some(None));
            (
                ExampleScores {
                    id: id.clone(),
                    bleu1: bleu_n(p, 1),
                    bleu2: bleu_n(p, 2),
                    bleu3: bleu_n(p, 3),
                    rouge_l: rouge_l(p),
                    embedding_avg_cs: emb.map(|e| e.unwrap_or(0.0)),
                },
                oov,
            )
        })
        .collect();
    let oov_pairs = scored.iter().filter(|(_, o)| *o).count();
    if oov_pairs > 0 {
        log::warn!("{oov_pairs} pairs had a side with no in-vocabulary token");
    }
    let examples: Vec<ExampleScores> = scored.into_iter().map(|(e, _)| e).collect();
    let n = examples.len().max(1) as f64;
    let mean = |f: fn(&ExampleScores) -> f64| examples.iter().map(f).sum::<f64>() / n;
    let mut means = MeanScores {
        bleu1: mean(|e| e.bleu1),
        bleu2: mean(|e| e.bleu2),
        bleu3: mean(|e| e.bleu3),
        rouge_l: mean(|e| e.rouge_l),
        embedding_avg_cs: table.map(|_| mean(|e| e.embedding_avg_cs.unwrap_or(0.0))),
    };
    if mode == BleuMode::Corpus {
        means.bleu1 = corpus_bleu(&pairs, 1);
        means.bleu2 = corpus_bleu(&pairs, 2);
        means.bleu3 = corpus_bleu(&pairs, 3);
    }
    Ok(MetricReport { bleu_mode: mode, examples, means, oov_pairs })
}
