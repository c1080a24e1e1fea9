use std::collections::BTreeMap;

use super::RankedList;

/// Graded judgments: query id → doc id → grade.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: impl Into<String>, doc: impl Into<String>, grade: u32) {
        self.judgments.entry(qid.into()).or_default().insert(doc.into(), grade);
    }

    pub fn grade(&self, qid: &str, doc: &str) -> u32 {
        self.judgments.get(qid).and_then(|m| m.get(doc)).copied().unwrap_or(0)
    }

    pub fn for_query(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(qid)
    }

    pub fn has_relevant(&self, qid: &str) -> bool {
        self.for_query(qid).is_some_and(|m| m.values().any(|g| *g > 0))
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments
            .iter()
            .flat_map(|(q, m)| m.iter().map(move |(d, g)| (q.as_str(), d.as_str(), *g)))
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

/// Gain `2^rel - 1`, discount `log2(rank + 1)`, normalized by the ideal
/// ordering of all judged documents. 0 when the query has no relevant
/// document.
pub fn ndcg_at(list: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    assert!(k >= 1, "nDCG cutoff must be at least 1");
    let Some(judged) = qrels.for_query(&list.qid) else { return 0.0 };
    let mut ideal: Vec<u32> = judged.values().copied().filter(|g| *g > 0).collect();
    if ideal.is_empty() {
        return 0.0;
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, g)| gain(*g) / discount(i + 1)).sum();
    let dcg: f64 = list
        .entries
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, (doc, _))| gain(qrels.grade(&list.qid, doc)) / discount(i + 1))
        .sum();
    dcg / idcg
}

pub fn precision_at_1(list: &RankedList, qrels: &Qrels) -> f64 {
    match list.entries.first() {
        Some((doc, _)) if qrels.grade(&list.qid, doc) > 0 => 1.0,
        _ => 0.0,
    }
}

pub fn mrr_at_100(list: &RankedList, qrels: &Qrels) -> f64 {
    list.entries
        .iter()
        .take(100)
        .position(|(doc, _)| qrels.grade(&list.qid, doc) > 0)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(docs: &[&str]) -> RankedList {
        RankedList {
            qid: "q".into(),
            entries: docs.iter().enumerate().map(|(i, d)| (d.to_string(), 100.0 - i as f64)).collect(),
        }
    }

    #[test]
    fn perfect_ordering_is_one() {
        let mut q = Qrels::new();
        q.insert("q", "a", 2);
        q.insert("q", "b", 1);
        assert!((ndcg_at(&list(&["a", "b", "c"]), &q, 5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relevant_at_rank_two() {
        let mut q = Qrels::new();
        q.insert("q", "b", 1);
        let v = ndcg_at(&list(&["a", "b", "c"]), &q, 5);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((v - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn no_relevant_docs_scores_zero() {
        let mut q = Qrels::new();
        q.insert("q", "a", 0);
        assert_eq!(ndcg_at(&list(&["a"]), &q, 5), 0.0);
        assert!(!q.has_relevant("q"));
        assert_eq!(ndcg_at(&list(&["a"]), &Qrels::new(), 5), 0.0);
    }

    #[test]
    fn precision_and_reciprocal_rank() {
        let mut q = Qrels::new();
        q.insert("q", "a", 1);
        assert_eq!(precision_at_1(&list(&["a"]), &q), 1.0);
        assert_eq!(mrr_at_100(&list(&["a"]), &q), 1.0);
        let l = list(&["w", "x", "y", "a"]);
        assert_eq!(precision_at_1(&l, &q), 0.0);
        assert_eq!(mrr_at_100(&l, &q), 0.25);
        let far: Vec<String> = (0..100).map(|i| format!("n{i}")).chain(["a".to_string()]).collect();
        let far: Vec<&str> = far.iter().map(String::as_str).collect();
        assert_eq!(mrr_at_100(&list(&far), &q), 0.0);
    }
}
