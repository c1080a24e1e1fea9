//! Deterministic rule-based answering and question-case detection.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{AnswerBackend, AnswerBackendKind, AnswerContext, BackendAnswer, SimError};
use crate::conversation::ConversationHistory;
use crate::corpus::{InformationNeed, QAExample, QuestionCase};
use crate::text::{jaccard, normalize_key, tokenize, ContentAnalyzer};

pub const REPEAT_REPLY: &str = "i already told you what i'm looking for";
pub const OFF_TOPIC_REPLY: &str = "i am not interested in this topic.";
pub const SIMILAR_PREFIX: &str = "as i said, ";
const NO_FALLBACK_REPLY: &str = "no, that is not what i am looking for";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    /// Jaccard similarity to any earlier system question at or above which a
    /// question counts as a repeat.
    pub repeat_threshold: f64,
    /// Jaccard similarity to the previous system question at or above which a
    /// question counts as similar.
    pub similar_threshold: f64,
    /// Facet-specific terms a question must share to be answered "yes".
    pub yes_min_shared_terms: usize,
    /// Maximum facet keywords revealed per answer.
    pub keyword_count: usize,
    /// Replaces the built-in stopword list when set.
    pub stopwords: Option<Vec<String>>,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            repeat_threshold: 0.9,
            similar_threshold: 0.6,
            yes_min_shared_terms: 1,
            keyword_count: 4,
            stopwords: None,
        }
    }
}

impl RuleConfig {
    pub fn analyzer(&self) -> ContentAnalyzer {
        match &self.stopwords {
            Some(words) => ContentAnalyzer::new(words.iter().map(String::as_str)),
            None => ContentAnalyzer::default(),
        }
    }
}

/// Jaccard over the sets of normalized tokens.
pub fn token_similarity(a: &str, b: &str) -> f64 {
    let na: BTreeSet<String> = tokenize(a).into_iter().collect();
    let nb: BTreeSet<String> = tokenize(b).into_iter().collect();
    jaccard(&na, &nb)
}

/// Jaccard over stemmed content terms, or over all normalized tokens when
/// neither side has content terms.
pub fn question_similarity(analyzer: &ContentAnalyzer, a: &str, b: &str) -> f64 {
    let ta = analyzer.content_terms(a);
    let tb = analyzer.content_terms(b);
    if ta.is_empty() && tb.is_empty() {
        return token_similarity(a, b);
    }
    jaccard(&ta, &tb)
}

/// Repeat, then Similar, then OffTopic, else Normal.
pub fn classify_question(
    need: &InformationNeed,
    history: &ConversationHistory,
    question: &str,
    config: &RuleConfig,
    analyzer: &ContentAnalyzer,
) -> QuestionCase {
    let prior: Vec<&str> = history.system_questions().collect();
    if prior
        .iter()
        .any(|p| token_similarity(p, question) >= config.repeat_threshold)
    {
        return QuestionCase::Repeat;
    }
    if let Some(prev) = prior.last() {
        if question_similarity(analyzer, prev, question) >= config.similar_threshold {
            return QuestionCase::Similar;
        }
    }
    let mut topical = analyzer.content_terms(&need.query);
    topical.extend(analyzer.content_terms(&need.facet_desc));
    if analyzer.content_terms(question).is_disjoint(&topical) {
        return QuestionCase::OffTopic;
    }
    QuestionCase::Normal
}

/// Document frequencies used to rank facet keywords by rarity.
#[derive(Debug, Clone, Default)]
pub struct TermRarity {
    doc_freq: HashMap<String, usize>,
    n_docs: usize,
}

impl TermRarity {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut n_docs = 0;
        for t in texts {
            n_docs += 1;
            let uniq: HashSet<String> = tokenize(t).into_iter().collect();
            for term in uniq {
                *doc_freq.entry(term).or_default() += 1;
            }
        }
        Self { doc_freq, n_docs }
    }

    /// Distinct facet descriptions and questions of a dataset.
    pub fn from_examples(examples: &[QAExample]) -> Self {
        let mut texts: BTreeSet<&str> = BTreeSet::new();
        for e in examples {
            texts.insert(&e.need.facet_desc);
            texts.insert(&e.question);
        }
        Self::from_texts(texts)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let df = self.doc_freq.get(term).copied().unwrap_or(0);
        ((self.n_docs as f64 + 1.0) / (df as f64 + 1.0)).ln()
    }
}

/// Facet content tokens not covered by the query, deduplicated by stem and
/// in facet order. Falls back to all facet content tokens.
fn facet_specific_terms(analyzer: &ContentAnalyzer, need: &InformationNeed) -> Vec<(String, String)> {
    let query_stems = analyzer.content_terms(&need.query);
    let facet: Vec<(String, String)> = {
        let mut seen = HashSet::new();
        analyzer
            .content_tokens(&need.facet_desc)
            .into_iter()
            .map(|t| {
                let s = analyzer.stem(&t);
                (t, s)
            })
            .filter(|(_, s)| seen.insert(s.clone()))
            .collect()
    };
    let specific: Vec<(String, String)> = facet
        .iter()
        .filter(|(_, s)| !query_stems.contains(s))
        .cloned()
        .collect();
    if specific.is_empty() {
        facet
    } else {
        specific
    }
}

/// Picks up to `count` rarest terms and returns them in their original order.
/// Drops trailing picks while the phrase would reproduce the whole facet.
fn keyword_phrase(
    candidates: &[(String, String)],
    count: usize,
    rarity: &TermRarity,
    facet_key: &str,
) -> Option<String> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        rarity
            .idf(&candidates[b].0)
            .partial_cmp(&rarity.idf(&candidates[a].0))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(count);
    order.sort_unstable();
    while !order.is_empty() {
        let phrase = order
            .iter()
            .map(|&i| candidates[i].0.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        if !phrase.contains(facet_key) {
            return Some(phrase);
        }
        order.pop();
    }
    None
}

pub fn rule_based_answer(
    need: &InformationNeed,
    history: &ConversationHistory,
    question: &str,
    config: &RuleConfig,
    analyzer: &ContentAnalyzer,
    rarity: &TermRarity,
) -> String {
    match classify_question(need, history, question, config, analyzer) {
        QuestionCase::Repeat => REPEAT_REPLY.to_string(),
        QuestionCase::OffTopic => OFF_TOPIC_REPLY.to_string(),
        QuestionCase::Similar => match history.last_user_answer() {
            Some(prev) => format!("{SIMILAR_PREFIX}{prev}"),
            None => REPEAT_REPLY.to_string(),
        },
        QuestionCase::Normal => normal_answer(need, question, config, analyzer, rarity),
    }
}

fn normal_answer(
    need: &InformationNeed,
    question: &str,
    config: &RuleConfig,
    analyzer: &ContentAnalyzer,
    rarity: &TermRarity,
) -> String {
    let specific = facet_specific_terms(analyzer, need);
    let question_stems = analyzer.content_terms(question);
    let shared = specific.iter().filter(|(_, s)| question_stems.contains(s)).count();
    let facet_key = normalize_key(&need.facet_desc);
    if shared >= config.yes_min_shared_terms && shared > 0 {
        return match keyword_phrase(&specific, config.keyword_count, rarity, &facet_key) {
            Some(kw) => format!("yes, {kw}"),
            None => "yes".to_string(),
        };
    }
    let absent: Vec<(String, String)> = specific
        .iter()
        .filter(|(_, s)| !question_stems.contains(s))
        .cloned()
        .collect();
    let pool = if absent.is_empty() { &specific } else { &absent };
    match keyword_phrase(pool, config.keyword_count, rarity, &facet_key) {
        Some(kw) => format!("no, i want {kw}"),
        None => NO_FALLBACK_REPLY.to_string(),
    }
}

/// Reference backend answering purely from the need and the history.
#[derive(Debug, Clone)]
pub struct RuleBasedBackend {
    config: RuleConfig,
    analyzer: ContentAnalyzer,
    rarity: TermRarity,
}

impl RuleBasedBackend {
    pub fn new(config: RuleConfig) -> Self {
        let analyzer = config.analyzer();
        Self { config, analyzer, rarity: TermRarity::default() }
    }

    pub fn with_rarity(mut self, rarity: TermRarity) -> Self {
        self.rarity = rarity;
        self
    }

    pub fn config(&self) -> &RuleConfig {
        &self.config
    }

    pub fn analyzer(&self) -> &ContentAnalyzer {
        &self.analyzer
    }

    pub fn classify(&self, need: &InformationNeed, history: &ConversationHistory, question: &str) -> QuestionCase {
        classify_question(need, history, question, &self.config, &self.analyzer)
    }

    pub fn respond(&self, need: &InformationNeed, history: &ConversationHistory, question: &str) -> String {
        rule_based_answer(need, history, question, &self.config, &self.analyzer, &self.rarity)
    }
}

impl Default for RuleBasedBackend {
    fn default() -> Self {
        Self::new(RuleConfig::default())
    }
}

impl AnswerBackend for RuleBasedBackend {
    fn name(&self) -> &str {
        "rule"
    }

    fn kind(&self) -> AnswerBackendKind {
        AnswerBackendKind::RuleBased
    }

    fn answer(&self, ctx: &AnswerContext<'_>) -> Result<BackendAnswer, SimError> {
        Ok(BackendAnswer::new(self.respond(ctx.need, ctx.history, ctx.question)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atlas() -> InformationNeed {
        InformationNeed::new("12", "F3", "I'm looking for an online world atlas", "find an online world atlas with country maps").unwrap()
    }

    fn classify(need: &InformationNeed, h: &ConversationHistory, q: &str) -> QuestionCase {
        let cfg = RuleConfig::default();
        classify_question(need, h, q, &cfg, &cfg.analyzer())
    }

    #[test]
    fn off_topic_ski_question_is_refused() {
        let need = atlas();
        let mut h = ConversationHistory::new(need.query.clone());
        h.push_question("Are you interested in satellite maps?").unwrap();
        h.push_answer("No, I want an online world atlas").unwrap();
        let q = "Which mountain ski resort would you like information around the pocono area?";
        assert_eq!(classify(&need, &h, q), QuestionCase::OffTopic);
        assert_eq!(RuleBasedBackend::default().respond(&need, &h, q), OFF_TOPIC_REPLY);
    }

    #[test]
    fn exact_repetition_is_repeat() {
        let need = atlas();
        let mut h = ConversationHistory::new(need.query.clone());
        h.push_question("Are you interested in satellite maps?").unwrap();
        h.push_answer("no").unwrap();
        assert_eq!(classify(&need, &h, "Are you interested in satellite maps?"), QuestionCase::Repeat);
        assert_eq!(
            RuleBasedBackend::default().respond(&need, &h, "are you interested in satellite maps"),
            REPEAT_REPLY
        );
    }

    #[test]
    fn first_question_is_normal_or_off_topic() {
        let need = atlas();
        let h = ConversationHistory::new(need.query.clone());
        assert_eq!(classify(&need, &h, "do you want maps of a specific country?"), QuestionCase::Normal);
        assert_eq!(classify(&need, &h, "do you like pizza?"), QuestionCase::OffTopic);
    }

    #[test]
    fn similar_question_restates_previous_answer() {
        let need = atlas();
        let mut h = ConversationHistory::new(need.query.clone());
        h.push_question("do you want printable political maps of europe?").unwrap();
        h.push_answer("no, i want maps of every country").unwrap();
        // {printabl, polit, map, europ} vs {printabl, polit, map, asia}: 3/5
        let q = "do you want printable political maps of asia?";
        let a = ContentAnalyzer::default();
        assert!((question_similarity(&a, h.system_questions().last().unwrap(), q) - 0.6).abs() < 1e-12);
        assert_eq!(classify(&need, &h, q), QuestionCase::Similar);
        assert_eq!(
            RuleBasedBackend::default().respond(&need, &h, q),
            "as i said, no, i want maps of every country"
        );
    }

    // The appointment/address pair shares no stemmed content term, so the
    // lexical detector cannot flag it: {like, request, appoint} vs
    // {address, mayo, clinic, jacksonvill, fl} gives Jaccard 0 < 0.6.
    #[test]
    fn mayo_clinic_sample_does_not_cross_similarity_threshold() {
        let need = InformationNeed::new(
            "30",
            "F1",
            "I'm looking for information about mayo clinic Jacksonville FL",
            "request an appointment at mayo clinic jacksonville fl",
        )
        .unwrap();
        let a = ContentAnalyzer::default();
        let prev = "Would you like to request an appointment?";
        let next = "Are you looking for the address of mayo clinic jacksonville fl?";
        assert_eq!(question_similarity(&a, prev, next), 0.0);
        let mut h = ConversationHistory::new(need.query.clone());
        h.push_question(prev).unwrap();
        h.push_answer("yes").unwrap();
        assert_eq!(classify(&need, &h, next), QuestionCase::Normal);
    }

    #[test]
    fn overlap_with_facet_answers_yes() {
        let need = InformationNeed::new("1", "F1", "dieting", "dieting tips and exercise plans").unwrap();
        let h = ConversationHistory::new("dieting");
        let ans = RuleBasedBackend::default().respond(&need, &h, "are you looking for dieting tips?");
        assert!(ans.starts_with("yes"), "{ans}");
    }

    #[test]
    fn zero_overlap_answers_no_with_facet_terms() {
        let need = InformationNeed::new("5", "F2", "how to cure angular cheilitis", "how do you treat severe angular cheilitis").unwrap();
        let h = ConversationHistory::new(need.query.clone());
        let ans = RuleBasedBackend::default().respond(&need, &h, "are you looking for the definition of angular cheilitis?");
        assert_eq!(ans, "no, i want treat severe");
    }

    #[test]
    fn keywords_never_reproduce_the_whole_facet() {
        let need = InformationNeed::new("1", "F1", "gardens", "raised beds").unwrap();
        let h = ConversationHistory::new("gardens");
        let ans = RuleBasedBackend::default().respond(&need, &h, "do you want garden tools?");
        assert!(!ans.contains("raised beds"), "{ans}");
        assert!(ans.starts_with("no"));
    }

    #[test]
    fn keyword_count_is_capped_and_rarity_ranked() {
        let need = InformationNeed::new(
            "1",
            "F1",
            "hobby stores",
            "what hobby stores carry model trains tracks scenery kits paint brushes",
        )
        .unwrap();
        let rarity = TermRarity::from_texts(["paint brushes for art", "model kits", "paint", "brushes"]);
        let b = RuleBasedBackend::default().with_rarity(rarity);
        let h = ConversationHistory::new("hobby stores");
        let ans = b.respond(&need, &h, "is this for a hobby store near you?");
        let kw: Vec<&str> = ans.trim_start_matches("no, i want ").split(' ').collect();
        assert_eq!(kw.len(), 4);
        assert_eq!(kw, vec!["carry", "trains", "tracks", "scenery"]);
    }
}
