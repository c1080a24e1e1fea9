//! Marker-delimited model input sequences.
//!
//! Single turn:  `in [SEP] q [SEP] cq [bos] a [eos]`
//!
//! Multi turn:   `in [user] q [system] cq_1 [user] a_1 ... [system] cq_i [bos] a_i [eos]`
//!
//! Fields and markers are joined by exactly one space. When the answer is
//! omitted the sequence ends at `[bos]`, ready for generation.

use serde::{Deserialize, Serialize};

use crate::conversation::{ConversationHistory, HistoryError, Role};
use crate::corpus::InformationNeed;
use crate::text::normalize_whitespace;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("field `{field}` contains marker `{marker}`")]
    MarkerCollision { field: &'static str, marker: String },
    #[error("invalid markers: {0}")]
    InvalidMarkers(String),
    #[error("history: {0}")]
    History(#[from] HistoryError),
    #[error("history ends with an unanswered question")]
    IncompleteHistory,
    #[error("sequence has no `{0}` marker")]
    MissingBos(String),
    #[error("sequence has {count} `{marker}` markers, expected one")]
    MultipleBos { marker: String, count: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecialMarkers {
    pub sep: String,
    pub bos: String,
    pub eos: String,
    pub user: String,
    pub system: String,
}

impl Default for SpecialMarkers {
    fn default() -> Self {
        Self {
            sep: "[SEP]".into(),
            bos: "[bos]".into(),
            eos: "[eos]".into(),
            user: "[user]".into(),
            system: "[system]".into(),
        }
    }
}

impl SpecialMarkers {
    pub fn all(&self) -> [&str; 5] {
        [&self.sep, &self.bos, &self.eos, &self.user, &self.system]
    }

    pub fn is_marker(&self, token: &str) -> bool {
        self.all().contains(&token)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let all = self.all();
        for (i, m) in all.iter().enumerate() {
            if m.is_empty() {
                return Err(CodecError::InvalidMarkers("empty marker".into()));
            }
            if m.chars().any(char::is_whitespace) {
                return Err(CodecError::InvalidMarkers(format!("marker `{m}` contains whitespace")));
            }
            for other in &all[i + 1..] {
                if m.contains(other) || other.contains(m) {
                    return Err(CodecError::InvalidMarkers(format!(
                        "markers `{m}` and `{other}` overlap"
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_field(&self, field: &'static str, content: &str) -> Result<(), CodecError> {
        for m in self.all() {
            if content.contains(m) {
                return Err(CodecError::MarkerCollision { field, marker: m.to_string() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SegmentLabel {
    Need,
    Query,
    Question,
    Answer,
    HistoryUser,
    HistorySystem,
}

/// Byte range `[start, end)` of one field inside [`MarkedSequence::text`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: SegmentLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedSequence {
    pub text: String,
    pub segments: Vec<Segment>,
}

impl MarkedSequence {
    /// Wraps raw text without segment information.
    pub fn raw(text: impl Into<String>) -> Self {
        Self { text: text.into(), segments: Vec::new() }
    }

    pub fn slice(&self, seg: &Segment) -> &str {
        &self.text[seg.start..seg.end]
    }

    pub fn fields(&self, label: SegmentLabel) -> Vec<&str> {
        self.segments
            .iter()
            .filter(|s| s.label == label)
            .map(|s| self.slice(s))
            .collect()
    }

    /// Whitespace tokens; markers come out as single tokens.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }
}

struct Builder<'m> {
    markers: &'m SpecialMarkers,
    seq: MarkedSequence,
}

impl<'m> Builder<'m> {
    fn new(markers: &'m SpecialMarkers) -> Self {
        Self { markers, seq: MarkedSequence::raw(String::new()) }
    }

    fn space(&mut self) {
        if !self.seq.text.is_empty() {
            self.seq.text.push(' ');
        }
    }

    fn marker(&mut self, m: &str) -> &mut Self {
        self.space();
        self.seq.text.push_str(m);
        self
    }

    fn field(&mut self, name: &'static str, content: &str, label: SegmentLabel) -> Result<&mut Self, CodecError> {
        let content = normalize_whitespace(content);
        self.markers.check_field(name, &content)?;
        self.space();
        let start = self.seq.text.len();
        self.seq.text.push_str(&content);
        self.seq.segments.push(Segment { start, end: self.seq.text.len(), label });
        Ok(self)
    }

    fn answer_tail(&mut self, answer: Option<&str>) -> Result<(), CodecError> {
        let bos = self.markers.bos.clone();
        self.marker(&bos);
        if let Some(a) = answer {
            self.field("answer", a, SegmentLabel::Answer)?;
            let eos = self.markers.eos.clone();
            self.marker(&eos);
        }
        Ok(())
    }
}

/// `in [SEP] q [SEP] cq [bos]` plus `a [eos]` when an answer is given.
pub fn encode_single(
    need: &InformationNeed,
    question: &str,
    answer: Option<&str>,
    markers: &SpecialMarkers,
) -> Result<MarkedSequence, CodecError> {
    markers.validate()?;
    let mut b = Builder::new(markers);
    b.field("facet_desc", &need.facet_desc, SegmentLabel::Need)?;
    b.marker(&markers.sep);
    b.field("query", &need.query, SegmentLabel::Query)?;
    b.marker(&markers.sep);
    b.field("question", question, SegmentLabel::Question)?;
    b.answer_tail(answer)?;
    Ok(b.seq)
}

/// History-aware layout. `history` must start with the user's initial query
/// and contain only completed (question, answer) pairs after it; the query
/// field is taken from `need`.
pub fn encode_multi(
    need: &InformationNeed,
    history: &ConversationHistory,
    question: &str,
    answer: Option<&str>,
    markers: &SpecialMarkers,
) -> Result<MarkedSequence, CodecError> {
    markers.validate()?;
    history.validate()?;
    if history.last_role() != Some(Role::User) {
        return Err(CodecError::IncompleteHistory);
    }
    let mut b = Builder::new(markers);
    b.field("facet_desc", &need.facet_desc, SegmentLabel::Need)?;
    b.marker(&markers.user);
    b.field("query", &need.query, SegmentLabel::Query)?;
    for (cq, a) in history.pairs() {
        b.marker(&markers.system);
        b.field("history_question", cq, SegmentLabel::HistorySystem)?;
        b.marker(&markers.user);
        b.field("history_answer", a, SegmentLabel::HistoryUser)?;
    }
    b.marker(&markers.system);
    b.field("question", question, SegmentLabel::Question)?;
    b.answer_tail(answer)?;
    Ok(b.seq)
}

/// Text between the single `[bos]` and the first following `[eos]` (or the
/// end of the text), trimmed.
pub fn decode_answer(text: &str, markers: &SpecialMarkers) -> Result<String, CodecError> {
    let count = text.matches(markers.bos.as_str()).count();
    match count {
        0 => return Err(CodecError::MissingBos(markers.bos.clone())),
        1 => {}
        _ => return Err(CodecError::MultipleBos { marker: markers.bos.clone(), count }),
    }
    let start = text.find(markers.bos.as_str()).unwrap_or_default() + markers.bos.len();
    let rest = &text[start..];
    let body = match rest.find(markers.eos.as_str()) {
        Some(end) => &rest[..end],
        None => rest,
    };
    Ok(body.trim().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::Turn;
    use proptest::prelude::*;

    fn need() -> InformationNeed {
        InformationNeed::new("1", "F1", "dieting", "dieting tips").unwrap()
    }

    #[test]
    fn single_turn_layout() {
        let m = SpecialMarkers::default();
        let s = encode_single(&need(), "are you looking for tips?", Some("yes"), &m).unwrap();
        assert_eq!(s.text, "dieting tips [SEP] dieting [SEP] are you looking for tips? [bos] yes [eos]");
        assert_eq!(s.fields(SegmentLabel::Need), vec!["dieting tips"]);
        assert_eq!(s.fields(SegmentLabel::Query), vec!["dieting"]);
        assert_eq!(s.fields(SegmentLabel::Question), vec!["are you looking for tips?"]);
        assert_eq!(s.fields(SegmentLabel::Answer), vec!["yes"]);
    }

    #[test]
    fn inference_mode_ends_at_bos() {
        let s = encode_single(&need(), "tips?", None, &SpecialMarkers::default()).unwrap();
        assert!(s.text.ends_with("tips? [bos]"));
        assert!(s.fields(SegmentLabel::Answer).is_empty());
    }

    #[test]
    fn marker_in_content_is_rejected() {
        let err = encode_single(&need(), "tips [SEP] now?", None, &SpecialMarkers::default()).unwrap_err();
        assert_eq!(err, CodecError::MarkerCollision { field: "question", marker: "[SEP]".into() });
    }

    #[test]
    fn multi_turn_empty_history() {
        let m = SpecialMarkers::default();
        let h = ConversationHistory::new("dieting");
        let s = encode_multi(&need(), &h, "tips?", Some("yes"), &m).unwrap();
        assert_eq!(s.text, "dieting tips [user] dieting [system] tips? [bos] yes [eos]");
    }

    #[test]
    fn multi_turn_marker_order() {
        let m = SpecialMarkers::default();
        let mut h = ConversationHistory::new("dieting");
        h.push_question("are you looking for dieting tips?").unwrap();
        h.push_answer("yes and exercise tips as well").unwrap();
        let s = encode_multi(&need(), &h, "counting calories?", None, &m).unwrap();
        let order: Vec<&str> = s.tokens().filter(|t| m.is_marker(t)).collect();
        assert_eq!(order, vec!["[user]", "[system]", "[user]", "[system]", "[bos]"]);
        assert_eq!(s.fields(SegmentLabel::HistoryUser), vec!["yes and exercise tips as well"]);
    }

    #[test]
    fn multi_turn_rejects_bad_history() {
        let m = SpecialMarkers::default();
        let h = ConversationHistory {
            turns: vec![Turn::user("dieting"), Turn::system("a?"), Turn::system("b?")],
        };
        assert!(matches!(encode_multi(&need(), &h, "c?", None, &m), Err(CodecError::History(_))));
        let mut open = ConversationHistory::new("dieting");
        open.push_question("a?").unwrap();
        assert_eq!(encode_multi(&need(), &open, "c?", None, &m), Err(CodecError::IncompleteHistory));
    }

    #[test]
    fn decode_cases() {
        let m = SpecialMarkers::default();
        assert_eq!(decode_answer("x [bos] yes i do [eos]", &m).unwrap(), "yes i do");
        assert_eq!(decode_answer("x [bos] no", &m).unwrap(), "no");
        assert_eq!(decode_answer("x [bos] no [eos] junk [eos]", &m).unwrap(), "no");
        assert!(matches!(decode_answer("no bos here", &m), Err(CodecError::MissingBos(_))));
        assert!(matches!(decode_answer("[bos] a [bos] b", &m), Err(CodecError::MultipleBos { count: 2, .. })));
    }

    #[test]
    fn marker_validation() {
        let mut m = SpecialMarkers::default();
        m.user = m.system.clone();
        assert!(m.validate().is_err());
        let m = SpecialMarkers { sep: String::new(), ..SpecialMarkers::default() };
        assert!(m.validate().is_err());
        let m = SpecialMarkers { eos: "[bos]x".into(), ..SpecialMarkers::default() };
        assert!(m.validate().is_err());
    }

    proptest! {
        #[test]
        fn answer_round_trips(answer in "[a-z0-9 ,.?!']{0,40}", question in "[a-z ?]{1,20}") {
            let m = SpecialMarkers::default();
            let s = encode_single(&need(), &question, Some(&answer), &m).unwrap();
            prop_assert_eq!(decode_answer(&s.text, &m).unwrap(), normalize_whitespace(&answer));
        }

        #[test]
        fn segments_cover_all_non_marker_text(answer in "[a-z ]{1,20}", q in "[a-z ]{1,20}") {
            let m = SpecialMarkers::default();
            let mut h = ConversationHistory::new("dieting");
            h.push_question(q.clone()).unwrap();
            h.push_answer(answer.clone()).unwrap();
            let s = encode_multi(&need(), &h, &q, Some(&answer), &m).unwrap();
            let mut covered = vec![false; s.text.len()];
            let mut last_end = 0;
            for seg in &s.segments {
                prop_assert!(seg.start >= last_end);
                last_end = seg.end;
                covered[seg.start..seg.end].iter_mut().for_each(|c| *c = true);
            }
            let mut residue = String::new();
            for (i, ch) in s.text.char_indices() {
                if !covered[i] { residue.push(ch); }
            }
            let stripped: String = residue.split_whitespace().filter(|t| !m.is_marker(t)).collect();
            prop_assert!(stripped.is_empty(), "uncovered text: {residue:?}");
        }
    }
}
