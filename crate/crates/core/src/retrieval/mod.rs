//! BM25 over an in-memory inverted index, clarification-expanded queries and
//! ranking metrics.

mod experiment;
mod metrics;
pub mod synthetic;
mod trec;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::text::tokenize;

pub use experiment::{
    run_experiment, AnswerSet, Comparison, ConditionReport, ExperimentConfig, MetricMeans, QueryMetrics, RunReport,
    QUERY_ONLY,
};
pub use metrics::{mrr_at_100, ndcg_at, precision_at_1, Qrels};
pub use trec::{load_collection, parse_collection_records, read_qrels, read_run, write_qrels, write_run};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("document id '{0}' appears more than once")]
    DuplicateId(String),
    #[error("the collection has no documents")]
    EmptyCollection,
    #[error("query has no tokens after tokenization")]
    EmptyQuery,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Position of the document in id order.
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone)]
pub struct DocumentCollection {
    ids: Vec<String>,
    texts: Vec<String>,
    lengths: Vec<usize>,
    avg_len: f64,
    index: HashMap<String, Vec<Posting>>,
}

/// Indexes `(id, text)` documents with the shared tokenizer. Documents are
/// stored in id order, so the result does not depend on input order.
pub fn build_index<I, S, T>(docs: I) -> Result<DocumentCollection, RetrievalError>
where
    I: IntoIterator<Item = (S, T)>,
    S: Into<String>,
    T: Into<String>,
{
    let mut by_id: BTreeMap<String, String> = BTreeMap::new();
    for (id, text) in docs {
        let id = id.into();
        if by_id.contains_key(&id) {
            return Err(RetrievalError::DuplicateId(id));
        }
        by_id.insert(id, text.into());
    }
    if by_id.is_empty() {
        return Err(RetrievalError::EmptyCollection);
    }
    let mut index: HashMap<String, Vec<Posting>> = HashMap::new();
    let mut ids = Vec::with_capacity(by_id.len());
    let mut texts = Vec::with_capacity(by_id.len());
    let mut lengths = Vec::with_capacity(by_id.len());
    for (doc, (id, text)) in by_id.into_iter().enumerate() {
        let tokens = tokenize(&text);
        lengths.push(tokens.len());
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in tokens {
            *tf.entry(t).or_default() += 1;
        }
        for (term, tf) in tf {
            index.entry(term).or_default().push(Posting { doc: doc as u32, tf });
        }
        ids.push(id);
        texts.push(text);
    }
    let avg_len = lengths.iter().sum::<usize>() as f64 / lengths.len() as f64;
    Ok(DocumentCollection { ids, texts, lengths, avg_len, index })
}

impl DocumentCollection {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn doc_id(&self, doc: u32) -> &str {
        &self.ids[doc as usize]
    }

    pub fn doc_text(&self, doc: u32) -> &str {
        &self.texts[doc as usize]
    }

    pub fn doc_len(&self, doc: u32) -> usize {
        self.lengths[doc as usize]
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.index.get(term).map(Vec::as_slice).unwrap_or_default()
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

/// Initial query optionally expanded with a clarifying question and answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandedQuery {
    pub query: String,
    pub question: Option<String>,
    pub answer: Option<String>,
}

/// How many times the question and answer text are repeated in the
/// expanded query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionWeights {
    pub question: usize,
    pub answer: usize,
}

impl Default for ExpansionWeights {
    fn default() -> Self {
        Self { question: 1, answer: 1 }
    }
}

impl ExpandedQuery {
    pub fn query_only(query: impl Into<String>) -> Self {
        Self { query: query.into(), question: None, answer: None }
    }

    pub fn expanded(query: impl Into<String>, question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self { query: query.into(), question: Some(question.into()), answer: Some(answer.into()) }
    }

    pub fn tokens(&self, weights: ExpansionWeights) -> Vec<String> {
        let mut out = tokenize(&self.query);
        for (field, times) in [(&self.question, weights.question), (&self.answer, weights.answer)] {
            if let Some(text) = field {
                let toks = tokenize(text);
                for _ in 0..times {
                    out.extend(toks.iter().cloned());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub qid: String,
    pub entries: Vec<(String, f64)>,
}

/// BM25 sum over query tokens, repeats included. Documents matching no query
/// term are not returned. Ties are broken by ascending doc id.
pub fn bm25_rank(
    collection: &DocumentCollection,
    query_tokens: &[String],
    depth: usize,
    params: Bm25Params,
) -> Result<Vec<(u32, f64)>, RetrievalError> {
    if query_tokens.is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let mut scores: HashMap<u32, f64> = HashMap::new();
    for term in query_tokens {
        let postings = collection.postings(term);
        if postings.is_empty() {
            continue;
        }
        let idf = collection.idf(term);
        for p in postings {
            let tf = f64::from(p.tf);
            let norm = 1.0 - params.b + params.b * collection.doc_len(p.doc) as f64 / collection.avg_len();
            *scores.entry(p.doc).or_default() += idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm);
        }
    }
    let mut ranked: Vec<(u32, f64)> = scores.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(depth);
    Ok(ranked)
}

/// [`bm25_rank`] on an expanded query, returning doc ids.
pub fn bm25_search(
    collection: &DocumentCollection,
    qid: &str,
    expanded: &ExpandedQuery,
    depth: usize,
    params: Bm25Params,
    weights: ExpansionWeights,
) -> Result<RankedList, RetrievalError> {
    let ranked = bm25_rank(collection, &expanded.tokens(weights), depth, params)?;
    Ok(RankedList {
        qid: qid.to_string(),
        entries: ranked.into_iter().map(|(d, s)| (collection.doc_id(d).to_string(), s)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> DocumentCollection {
        build_index([("d1", "apple banana apple"), ("d2", "banana cherry"), ("d3", "cherry date elder fig")]).unwrap()
    }

    #[test]
    fn postings_match_hand_enumeration() {
        let c = toy();
        assert_eq!(c.postings("apple"), &[Posting { doc: 0, tf: 2 }]);
        assert_eq!(c.postings("banana"), &[Posting { doc: 0, tf: 1 }, Posting { doc: 1, tf: 1 }]);
        assert_eq!(c.postings("cherry"), &[Posting { doc: 1, tf: 1 }, Posting { doc: 2, tf: 1 }]);
        assert_eq!(c.postings("fig"), &[Posting { doc: 2, tf: 1 }]);
        assert_eq!((c.doc_len(0), c.doc_len(1), c.doc_len(2)), (3, 2, 4));
        assert!((c.avg_len() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_document_has_length_zero() {
        let c = build_index([("a", ""), ("b", "x")]).unwrap();
        assert_eq!(c.doc_len(0), 0);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        assert!(matches!(build_index([("a", "x"), ("a", "y")]), Err(RetrievalError::DuplicateId(_))));
    }

    #[test]
    fn single_term_score_matches_formula() {
        let c = toy();
        let hits = bm25_rank(&c, &["fig".to_string()], 10, Bm25Params::default()).unwrap();
        let idf = (1.0f64 + (3.0 - 1.0 + 0.5) / (1.0 + 0.5)).ln();
        let want = idf * 1.0 * 2.2 / (1.0 + 1.2 * (1.0 - 0.75 + 0.75 * 4.0 / 3.0));
        assert_eq!(hits.len(), 1);
        assert_eq!(c.doc_id(hits[0].0), "d3");
        assert!((hits[0].1 - want).abs() < 1e-12);
    }

    #[test]
    fn absent_term_contributes_nothing() {
        let c = toy();
        let a = bm25_rank(&c, &["banana".to_string()], 10, Bm25Params::default()).unwrap();
        let b = bm25_rank(&c, &["banana".to_string(), "zebra".to_string()], 10, Bm25Params::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_docs_tie_in_id_order() {
        let c = build_index([("b", "same text"), ("a", "same text"), ("c", "other")]).unwrap();
        let hits = bm25_search(&c, "q", &ExpandedQuery::query_only("same"), 10, Bm25Params::default(), ExpansionWeights::default())
            .unwrap();
        assert_eq!(hits.entries[0].1, hits.entries[1].1);
        assert_eq!(hits.entries.iter().map(|e| e.0.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn empty_query_is_an_error() {
        let c = toy();
        assert!(matches!(
            bm25_search(&c, "q", &ExpandedQuery::query_only("?!"), 10, Bm25Params::default(), ExpansionWeights::default()),
            Err(RetrievalError::EmptyQuery)
        ));
    }

    #[test]
    fn expansion_repeats_fields_by_weight() {
        let q = ExpandedQuery::expanded("dieting", "tips?", "yes teen");
        assert_eq!(q.tokens(ExpansionWeights::default()), vec!["dieting", "tips", "yes", "teen"]);
        assert_eq!(
            q.tokens(ExpansionWeights { question: 0, answer: 2 }),
            vec!["dieting", "yes", "teen", "yes", "teen"]
        );
    }
}
