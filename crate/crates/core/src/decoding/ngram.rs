use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{draw, filter_pipeline, DecodingError, DecodingParams, NextTokenDistribution};
use crate::promptcodec::{MarkedSequence, SpecialMarkers};

pub const NGRAM_FORMAT: &str = "clarisim-ngram";
pub const NGRAM_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<u32, u64>,
}

/// Add-alpha smoothed n-gram model over whitespace tokens.
///
/// Contexts are the preceding `order - 1` tokens of the same sequence, or
/// fewer at the start of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    alpha: f64,
    vocab: Arc<[String]>,
    index: HashMap<String, u32>,
    counts: HashMap<Vec<u32>, ContextCounts>,
}

pub fn train_ngram(examples: &[MarkedSequence], order: usize, alpha: f64) -> Result<NGramModel, DecodingError> {
    if order == 0 {
        return Err(DecodingError::InvalidOrder);
    }
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(DecodingError::InvalidAlpha(alpha));
    }
    let mut vocab: Vec<String> = Vec::new();
    let mut index: HashMap<String, u32> = HashMap::new();
    let mut counts: HashMap<Vec<u32>, ContextCounts> = HashMap::new();
    let mut any = false;
    for seq in examples {
        let ids: Vec<u32> = seq
            .tokens()
            .map(|t| {
                *index.entry(t.to_string()).or_insert_with(|| {
                    vocab.push(t.to_string());
                    (vocab.len() - 1) as u32
                })
            })
            .collect();
        for i in 0..ids.len() {
            any = true;
            let ctx = ids[i.saturating_sub(order - 1)..i].to_vec();
            let entry = counts.entry(ctx).or_default();
            entry.total += 1;
            *entry.next.entry(ids[i]).or_default() += 1;
        }
    }
    if !any {
        return Err(DecodingError::EmptyCorpus);
    }
    Ok(NGramModel { order, alpha, vocab: vocab.into(), index, counts })
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn context_ids(&self, history: &[&str]) -> Option<Vec<u32>> {
        let start = history.len().saturating_sub(self.order - 1);
        history[start..]
            .iter()
            .map(|t| self.index.get(*t).copied())
            .collect()
    }

    /// Smoothed `P(token | context)`; only the last `order - 1` context
    /// tokens are used.
    pub fn prob(&self, context: &[&str], token: &str) -> f64 {
        let v = self.vocab.len() as f64;
        let Some(id) = self.index.get(token) else {
            return 0.0;
        };
        match self.context_ids(context).and_then(|c| self.counts.get(&c)) {
            Some(cc) => {
                let c = cc.next.get(id).copied().unwrap_or(0) as f64;
                (c + self.alpha) / (cc.total as f64 + self.alpha * v)
            }
            None => 1.0 / v,
        }
    }

    pub fn distribution(&self, context: &[&str]) -> NextTokenDistribution {
        let v = self.vocab.len();
        let probs = match self.context_ids(context).and_then(|c| self.counts.get(&c)) {
            Some(cc) => {
                let denom = cc.total as f64 + self.alpha * v as f64;
                let mut p = vec![self.alpha / denom; v];
                for (&id, &c) in &cc.next {
                    p[id as usize] = (c as f64 + self.alpha) / denom;
                }
                p
            }
            None => vec![1.0 / v as f64; v],
        };
        // renormalize away accumulated rounding in large vocabularies
        let sum: f64 = probs.iter().sum();
        let probs = probs.into_iter().map(|p| p / sum).collect();
        NextTokenDistribution::new(Arc::clone(&self.vocab), probs)
            .expect("smoothed counts form a valid distribution")
    }

    /// Samples answer tokens after `prefix` (which must end with the
    /// begin-of-answer marker) until the end marker, any other marker, or
    /// `max_tokens`.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        prefix: &MarkedSequence,
        markers: &SpecialMarkers,
        params: &DecodingParams,
        rng: &mut R,
    ) -> Result<String, DecodingError> {
        params.validate()?;
        let mut context: Vec<&str> = prefix.tokens().collect();
        if context.last() != Some(&markers.bos.as_str()) {
            return Err(DecodingError::PrefixWithoutBos(markers.bos.clone()));
        }
        let mut answer: Vec<&str> = Vec::new();
        for _ in 0..params.max_tokens {
            let dist = self.distribution(&context);
            let filtered = filter_pipeline(&dist, params)?;
            let token = &self.vocab[draw(&filtered, rng)];
            if markers.is_marker(token) {
                break;
            }
            answer.push(token);
            context.push(token);
        }
        Ok(answer.join(" "))
    }

    pub fn save<W: Write>(&self, out: W) -> Result<(), DecodingError> {
        let mut contexts: Vec<ContextRecord> = self
            .counts
            .iter()
            .map(|(ctx, cc)| ContextRecord {
                context: ctx.clone(),
                next: cc.next.iter().map(|(&k, &v)| (k, v)).collect(),
            })
            .collect();
        contexts.sort_by(|a, b| a.context.cmp(&b.context));
        let file = ModelFile {
            format: NGRAM_FORMAT.to_string(),
            version: NGRAM_FORMAT_VERSION,
            order: self.order,
            alpha: self.alpha,
            vocab: self.vocab.to_vec(),
            contexts,
        };
        serde_json::to_writer(out, &file)?;
        Ok(())
    }

    pub fn load<R: Read>(input: R) -> Result<Self, DecodingError> {
        let file: ModelFile = serde_json::from_reader(input)?;
        if file.format != NGRAM_FORMAT {
            return Err(DecodingError::Format(format!("unexpected format tag `{}`", file.format)));
        }
        if file.version != NGRAM_FORMAT_VERSION {
            return Err(DecodingError::Format(format!("unsupported version {}", file.version)));
        }
        if file.order == 0 {
            return Err(DecodingError::InvalidOrder);
        }
        if file.alpha <= 0.0 || file.alpha.is_nan() {
            return Err(DecodingError::InvalidAlpha(file.alpha));
        }
        let v = file.vocab.len() as u32;
        let mut index = HashMap::with_capacity(file.vocab.len());
        for (i, t) in file.vocab.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(DecodingError::Format(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        let mut counts = HashMap::with_capacity(file.contexts.len());
        for rec in file.contexts {
            if rec.context.len() >= file.order || rec.context.iter().any(|&i| i >= v) {
                return Err(DecodingError::Format(format!("invalid context {:?}", rec.context)));
            }
            let mut cc = ContextCounts::default();
            for (id, c) in rec.next {
                if id >= v || c == 0 {
                    return Err(DecodingError::Format(format!("invalid count entry ({id}, {c})")));
                }
                cc.total += c;
                cc.next.insert(id, c);
            }
            counts.insert(rec.context, cc);
        }
        Ok(Self { order: file.order, alpha: file.alpha, vocab: file.vocab.into(), index, counts })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ContextRecord {
    context: Vec<u32>,
    next: Vec<(u32, u64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    order: usize,
    alpha: f64,
    vocab: Vec<String>,
    contexts: Vec<ContextRecord>,
}
