//! Next-token distributions and the temperature / top-k / top-p sampling
//! stack, plus the built-in n-gram backend.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

mod ngram;

pub use ngram::{train_ngram, NGramModel, DEFAULT_ALPHA, NGRAM_FORMAT, NGRAM_FORMAT_VERSION};

pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum DecodingError {
    #[error("temperature must be > 0, got {0}")]
    InvalidTemperature(f64),
    #[error("invalid decoding parameters: {0}")]
    InvalidParams(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error("n-gram order must be >= 1")]
    InvalidOrder,
    #[error("smoothing constant must be > 0, got {0}")]
    InvalidAlpha(f64),
    #[error("generation prefix must end with `{0}`")]
    PrefixWithoutBos(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("model file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Probability vector over an ordered vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenDistribution {
    vocab: Arc<[String]>,
    probs: Vec<f64>,
}

impl NextTokenDistribution {
    pub fn new(vocab: impl Into<Arc<[String]>>, probs: Vec<f64>) -> Result<Self, DecodingError> {
        let vocab = vocab.into();
        if vocab.len() != probs.len() {
            return Err(DecodingError::InvalidDistribution(format!(
                "{} tokens but {} probabilities",
                vocab.len(),
                probs.len()
            )));
        }
        if probs.is_empty() {
            return Err(DecodingError::InvalidDistribution("empty vocabulary".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(DecodingError::InvalidDistribution(format!("bad probability {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(DecodingError::InvalidDistribution(format!("probabilities sum to {sum}")));
        }
        Ok(Self { vocab, probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(vocab: impl Into<Arc<[String]>>, weights: Vec<f64>) -> Result<Self, DecodingError> {
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 || !sum.is_finite() {
            return Err(DecodingError::InvalidDistribution(format!("weights sum to {sum}")));
        }
        let probs = weights.into_iter().map(|w| w / sum).collect();
        Self::new(vocab, probs)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.vocab[index]
    }

    /// Highest-probability index, lowest index on ties.
    pub fn argmax(&self) -> usize {
        self.ranked()[0]
    }

    /// Indices by descending probability, ties by vocabulary order.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| {
            self.probs[b]
                .partial_cmp(&self.probs[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    }

    fn with_weights(&self, weights: Vec<f64>) -> Self {
        let sum: f64 = weights.iter().sum();
        Self {
            vocab: Arc::clone(&self.vocab),
            probs: weights.into_iter().map(|w| w / sum).collect(),
        }
    }

    fn keep(&self, kept: &[usize]) -> Self {
        let mut w = vec![0.0; self.probs.len()];
        for &i in kept {
            w[i] = self.probs[i];
        }
        // all kept tokens may have zero mass when k exceeds the support
        if w.iter().sum::<f64>() <= 0.0 {
            return self.clone();
        }
        self.with_weights(w)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOrder {
    /// temperature, then top-k, then top-p
    #[default]
    TopKThenTopP,
    /// temperature, then top-p, then top-k
    TopPThenTopK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingParams {
    pub temperature: f64,
    /// 0 disables top-k filtering.
    pub top_k: usize,
    pub top_p: f64,
    pub max_tokens: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "is_default_order")]
    pub filter_order: FilterOrder,
}

fn is_default_order(o: &FilterOrder) -> bool {
    *o == FilterOrder::default()
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_k: 0,
            top_p: 0.9,
            max_tokens: 40,
            seed: 0,
            filter_order: FilterOrder::default(),
        }
    }
}

impl DecodingParams {
    pub fn validate(&self) -> Result<(), DecodingError> {
        if self.temperature <= 0.0 || !self.temperature.is_finite() {
            return Err(DecodingError::InvalidTemperature(self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(DecodingError::InvalidParams(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Rescales probabilities to `p_i^(1/T)` and renormalizes. Computed in log
/// space so very small temperatures do not underflow.
pub fn apply_temperature(
    dist: &NextTokenDistribution,
    temperature: f64,
) -> Result<NextTokenDistribution, DecodingError> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(DecodingError::InvalidTemperature(temperature));
    }
    if temperature == 1.0 {
        return Ok(dist.clone());
    }
    let max_log = dist
        .probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let weights = dist
        .probs
        .iter()
        .map(|&p| if p > 0.0 { ((p.ln() - max_log) / temperature).exp() } else { 0.0 })
        .collect();
    Ok(dist.with_weights(weights))
}

/// Keeps the `k` most probable tokens. `k = 0` or `k >= |V|` is the identity.
pub fn filter_top_k(dist: &NextTokenDistribution, k: usize) -> NextTokenDistribution {
    if k == 0 || k >= dist.len() {
        return dist.clone();
    }
    let ranked = dist.ranked();
    dist.keep(&ranked[..k])
}

/// Slack on the cumulative-mass comparison so sums like 0.5 + 0.3 still
/// reach a threshold of 0.8.
const NUCLEUS_SLACK: f64 = 1e-12;

/// Keeps the smallest probability-ranked prefix whose mass reaches `p`
/// (inclusive, at least one token).
pub fn filter_top_p(dist: &NextTokenDistribution, p: f64) -> NextTokenDistribution {
    if p >= 1.0 {
        return dist.clone();
    }
    let ranked = dist.ranked();
    let mut cum = 0.0;
    let mut cut = ranked.len();
    for (n, &i) in ranked.iter().enumerate() {
        cum += dist.probs[i];
        if cum >= p - NUCLEUS_SLACK {
            cut = n + 1;
            break;
        }
    }
    dist.keep(&ranked[..cut.max(1)])
}

/// Applies the full filter stack in `params.filter_order`.
pub fn filter_pipeline(
    dist: &NextTokenDistribution,
    params: &DecodingParams,
) -> Result<NextTokenDistribution, DecodingError> {
    let tempered = apply_temperature(dist, params.temperature)?;
    Ok(match params.filter_order {
        FilterOrder::TopKThenTopP => filter_top_p(&filter_top_k(&tempered, params.top_k), params.top_p),
        FilterOrder::TopPThenTopK => filter_top_k(&filter_top_p(&tempered, params.top_p), params.top_k),
    })
}

/// Inverse-CDF draw from an already filtered distribution.
pub fn draw<R: Rng + ?Sized>(dist: &NextTokenDistribution, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last_nonzero = i;
        cum += p;
        if u < cum {
            return i;
        }
    }
    last_nonzero
}

/// Filters with `params` and draws one token index.
pub fn sample<R: Rng + ?Sized>(
    dist: &NextTokenDistribution,
    params: &DecodingParams,
    rng: &mut R,
) -> Result<usize, DecodingError> {
    let filtered = filter_pipeline(dist, params)?;
    Ok(draw(&filtered, rng))
}

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(base ^ mix(stream))
}
