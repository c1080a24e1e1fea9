//! Tokenization shared by the metrics, retrieval and rule-based modules.

use std::collections::BTreeSet;

use rust_stemmers::{Algorithm, Stemmer};

/// Lowercases and splits on every non-alphanumeric character, dropping empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Collapses whitespace runs to single spaces and trims.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercased, tokenized and re-joined form used as a lookup key.
pub fn normalize_key(text: &str) -> String {
    tokenize(text).join(" ")
}

/// English function words plus search-dialogue filler ("looking", "information", ...)
/// that carry no facet content.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "anything", "are", "as", "at", "be", "because", "been", "before", "being", "below", "between",
    "both", "but", "by", "can", "could", "did", "do", "does", "doing", "don", "down", "during",
    "each", "else", "few", "find", "for", "from", "further", "get", "had", "has", "have", "having",
    "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "if", "im", "in",
    "info", "information", "interested", "into", "is", "it", "its", "itself", "just", "know",
    "like", "ll", "look", "looking", "m", "me", "more", "most", "my", "myself", "need", "no",
    "nor", "not", "now", "of", "off", "on", "once", "only", "or", "other", "our", "ours",
    "ourselves", "out", "over", "own", "re", "s", "same", "search", "searching", "she", "should",
    "so", "some", "something", "specific", "t", "tell", "than", "that", "the", "their", "theirs",
    "them", "themselves", "then", "there", "these", "they", "thing", "things", "this", "those",
    "through", "to", "too", "under", "until", "up", "ve", "very", "want", "wanted", "was", "we",
    "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with",
    "would", "yes", "you", "your", "yours", "yourself", "yourselves",
];

/// Stopword filtering and Porter stemming for content-term extraction.
pub struct ContentAnalyzer {
    stopwords: BTreeSet<String>,
    stemmer: Stemmer,
}

impl std::fmt::Debug for ContentAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContentAnalyzer")
            .field("stopwords", &self.stopwords.len())
            .finish()
    }
}

impl Default for ContentAnalyzer {
    fn default() -> Self {
        Self::new(DEFAULT_STOPWORDS.iter().copied())
    }
}

impl Clone for ContentAnalyzer {
    fn clone(&self) -> Self {
        Self::new(self.stopwords.iter().map(String::as_str))
    }
}

impl ContentAnalyzer {
    pub fn new<'a>(stopwords: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            stopwords: stopwords.into_iter().map(str::to_lowercase).collect(),
            stemmer: Stemmer::create(Algorithm::English),
        }
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    pub fn stem(&self, token: &str) -> String {
        self.stemmer.stem(token).into_owned()
    }

    /// Content tokens (unstemmed) in order of appearance, duplicates kept.
    pub fn content_tokens(&self, text: &str) -> Vec<String> {
        tokenize(text)
            .into_iter()
            .filter(|t| !self.is_stopword(t))
            .collect()
    }

    /// Set of stemmed content terms.
    pub fn content_terms(&self, text: &str) -> BTreeSet<String> {
        self.content_tokens(text)
            .iter()
            .map(|t| self.stem(t))
            .collect()
    }
}

/// Jaccard index of two sets; two empty sets count as identical.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}
