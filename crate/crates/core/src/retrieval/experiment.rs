use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bm25_search, mrr_at_100, ndcg_at, precision_at_1, Bm25Params, DocumentCollection, ExpandedQuery, ExpansionWeights, Qrels};
use crate::corpus::QAExample;
use crate::simulator::AnswerRecord;
use crate::stats::paired_t_test;
use crate::text::normalize_key;

pub const QUERY_ONLY: &str = "query";
const METRICS: [&str; 5] = ["ndcg@1", "ndcg@5", "ndcg@20", "p@1", "mrr@100"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub bm25: Bm25Params,
    pub weights: ExpansionWeights,
    /// Ranking depth per query.
    pub depth: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { bm25: Bm25Params::default(), weights: ExpansionWeights::default(), depth: 100 }
    }
}

/// Simulated answers from one backend.
#[derive(Debug, Clone)]
pub struct AnswerSet {
    pub name: String,
    pub records: Vec<AnswerRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricMeans {
    #[serde(rename = "ndcg@1")]
    pub ndcg1: f64,
    #[serde(rename = "ndcg@5")]
    pub ndcg5: f64,
    #[serde(rename = "ndcg@20")]
    pub ndcg20: f64,
    #[serde(rename = "p@1")]
    pub p1: f64,
    #[serde(rename = "mrr@100")]
    pub mrr100: f64,
}

impl MetricMeans {
    pub fn get(&self, metric: &str) -> Option<f64> {
        Some(match metric {
            "ndcg@1" => self.ndcg1,
            "ndcg@5" => self.ndcg5,
            "ndcg@20" => self.ndcg20,
            "p@1" => self.p1,
            "mrr@100" => self.mrr100,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub qid: String,
    pub question: String,
    #[serde(flatten)]
    pub metrics: MetricMeans,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub name: String,
    pub means: MetricMeans,
    pub per_query: Vec<QueryMetrics>,
    /// Rows evaluated query-only because no answer was found.
    pub missing_answers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub metric: String,
    /// Mean of `a - b`.
    pub mean_delta: f64,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub queries: usize,
    /// Rows whose need has no relevant document; they score 0 everywhere.
    pub no_relevant: usize,
    pub conditions: Vec<ConditionReport>,
    pub comparisons: Vec<Comparison>,
}

impl RunReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn comparison(&self, a: &str, b: &str, metric: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.a == a && c.b == b && c.metric == metric)
    }
}

fn score(collection: &DocumentCollection, qrels: &Qrels, qid: &str, q: &ExpandedQuery, cfg: &ExperimentConfig) -> (MetricMeans, Option<String>) {
    match bm25_search(collection, qid, q, cfg.depth, cfg.bm25, cfg.weights) {
        Ok(list) => (
            MetricMeans {
                ndcg1: ndcg_at(&list, qrels, 1),
                ndcg5: ndcg_at(&list, qrels, 5),
                ndcg20: ndcg_at(&list, qrels, 20),
                p1: precision_at_1(&list, qrels),
                mrr100: mrr_at_100(&list, qrels),
            },
            None,
        ),
        Err(e) => (MetricMeans::default(), Some(format!("search_failed: {e}"))),
    }
}

fn mean_of(rows: &[QueryMetrics]) -> MetricMeans {
    let n = rows.len().max(1) as f64;
    let sum = |f: fn(&MetricMeans) -> f64| rows.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
    MetricMeans {
        ndcg1: sum(|m| m.ndcg1),
        ndcg5: sum(|m| m.ndcg5),
        ndcg20: sum(|m| m.ndcg20),
        p1: sum(|m| m.p1),
        mrr100: sum(|m| m.mrr100),
    }
}

/// One evaluation unit per dataset row. The query-only condition uses the
/// need's query; each answer set adds one condition expanding the query with
/// the row's question and that set's answer. Every expanded condition is
/// t-tested against query-only and against each other.
pub fn run_experiment(
    collection: &DocumentCollection,
    dataset: &[QAExample],
    answers: &[AnswerSet],
    qrels: &Qrels,
    cfg: &ExperimentConfig,
) -> RunReport {
    let rows: Vec<(String, &QAExample)> = dataset.iter().map(|e| (e.need.key().qid(), e)).collect();
    let no_relevant = rows.iter().filter(|(qid, _)| !qrels.has_relevant(qid)).count();

    let baseline: Vec<QueryMetrics> = rows
        .par_iter()
        .map(|(qid, e)| {
            let (metrics, err) = score(collection, qrels, qid, &ExpandedQuery::query_only(&e.need.query), cfg);
            let mut flags: Vec<String> = err.into_iter().collect();
            if !qrels.has_relevant(qid) {
                flags.push("no_relevant".into());
            }
            QueryMetrics { qid: qid.clone(), question: e.question.clone(), metrics, flags }
        })
        .collect();
    let mut conditions = vec![ConditionReport {
        name: QUERY_ONLY.to_string(),
        means: mean_of(&baseline),
        per_query: baseline.clone(),
        missing_answers: 0,
    }];

    for set in answers {
        let mut lookup: HashMap<(&str, &str, String), &str> = HashMap::new();
        for r in &set.records {
            if r.error.is_none() {
                lookup.entry((&r.topic_id, &r.facet_id, normalize_key(&r.question))).or_insert(&r.answer);
            }
        }
        let per_query: Vec<QueryMetrics> = rows
            .par_iter()
            .zip(&baseline)
            .map(|((qid, e), base)| {
                let key = (e.need.topic_id.as_str(), e.need.facet_id.as_str(), normalize_key(&e.question));
                match lookup.get(&key) {
                    Some(a) => {
                        let q = ExpandedQuery::expanded(&e.need.query, &e.question, *a);
                        let (metrics, err) = score(collection, qrels, qid, &q, cfg);
                        let mut flags: Vec<String> = err.into_iter().collect();
                        flags.extend(base.flags.iter().filter(|f| *f == "no_relevant").cloned());
                        QueryMetrics { qid: qid.clone(), question: e.question.clone(), metrics, flags }
                    }
                    None => {
                        let mut m = base.clone();
                        m.flags.push("missing_answer".into());
                        m
                    }
                }
            })
            .collect();
        let missing_answers = per_query.iter().filter(|q| q.flags.iter().any(|f| f == "missing_answer")).count();
        if missing_answers > 0 {
            log::warn!("{}: {missing_answers} rows had no answer and were scored query-only", set.name);
        }
        conditions.push(ConditionReport {
            name: format!("{QUERY_ONLY}+question+{}", set.name),
            means: mean_of(&per_query),
            per_query,
            missing_answers,
        });
    }

    let mut comparisons = Vec::new();
    let values = |c: &ConditionReport, metric: &str| -> Vec<f64> {
        c.per_query.iter().map(|q| q.metrics.get(metric).unwrap_or(0.0)).collect()
    };
    for i in 1..conditions.len() {
        for j in 0..i {
            for metric in METRICS {
                let (a, b) = (values(&conditions[i], metric), values(&conditions[j], metric));
                let delta = if a.is_empty() { 0.0 } else { a.iter().zip(&b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64 };
                let (statistic, p_value) = match paired_t_test(&a, &b) {
                    Ok(t) => (t.statistic, t.p_value),
                    Err(_) => (0.0, 1.0),
                };
                comparisons.push(Comparison {
                    a: conditions[i].name.clone(),
                    b: conditions[j].name.clone(),
                    metric: metric.to_string(),
                    mean_delta: delta,
                    statistic,
                    p_value,
                });
            }
        }
    }
    RunReport { queries: rows.len(), no_relevant, conditions, comparisons }
}
