use std::collections::HashMap;

use super::rules::{RuleBasedBackend, TermRarity};
use super::{flags, AnswerBackend, AnswerBackendKind, AnswerContext, BackendAnswer, SimError};
use crate::corpus::{MultiTurnConversation, NeedKey, QAExample};
use crate::text::normalize_key;

/// Looks answers up in a loaded dataset; unseen questions go to the rule-based
/// backend and are flagged.
#[derive(Debug, Clone)]
pub struct CorpusOracle {
    answers: HashMap<(NeedKey, String), String>,
    fallback: RuleBasedBackend,
}

impl CorpusOracle {
    /// The first answer seen for a (need, question) key wins.
    pub fn new(examples: &[QAExample]) -> Self {
        let mut answers = HashMap::new();
        for e in examples {
            answers
                .entry((e.need.key(), normalize_key(&e.question)))
                .or_insert_with(|| e.answer.clone());
        }
        let fallback = RuleBasedBackend::default().with_rarity(TermRarity::from_examples(examples));
        Self { answers, fallback }
    }

    pub fn from_conversations(convs: &[MultiTurnConversation]) -> Self {
        let mut oracle = Self::new(&[]);
        oracle.extend_conversations(convs);
        oracle
    }

    pub fn extend_conversations(&mut self, convs: &[MultiTurnConversation]) {
        for c in convs {
            for t in &c.turns {
                self.answers
                    .entry((c.need.key(), normalize_key(&t.question)))
                    .or_insert_with(|| t.answer.clone());
            }
        }
    }

    pub fn with_fallback(mut self, fallback: RuleBasedBackend) -> Self {
        self.fallback = fallback;
        self
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn lookup(&self, key: &NeedKey, question: &str) -> Option<&str> {
        self.answers
            .get(&(key.clone(), normalize_key(question)))
            .map(String::as_str)
    }
}

impl AnswerBackend for CorpusOracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn kind(&self) -> AnswerBackendKind {
        AnswerBackendKind::CorpusOracle
    }

    fn answer(&self, ctx: &AnswerContext<'_>) -> Result<BackendAnswer, SimError> {
        match self.lookup(&ctx.need.key(), ctx.question) {
            Some(a) => Ok(BackendAnswer::new(a)),
            None => Ok(BackendAnswer::new(self.fallback.respond(ctx.need, ctx.history, ctx.question))
                .flagged(flags::ORACLE_MISS)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::ConversationHistory;
    use crate::corpus::InformationNeed;
    use crate::decoding::DecodingParams;

    #[test]
    fn lookup_normalizes_question_and_falls_back() {
        let need = InformationNeed::new("5", "F1", "angular cheilitis", "how do you treat severe angular cheilitis").unwrap();
        let ex = QAExample::new(
            need.clone(),
            "are you looking for the definition of angular cheilitis?",
            "no i want to know about treatment",
        )
        .unwrap();
        let oracle = CorpusOracle::new(&[ex]);
        let h = ConversationHistory::new(need.query.clone());
        let params = DecodingParams::default();
        let ctx = AnswerContext {
            need: &need,
            history: &h,
            question: "Are you  looking for the DEFINITION of angular cheilitis?",
            params: &params,
        };
        let hit = oracle.answer(&ctx).unwrap();
        assert_eq!(hit.text, "no i want to know about treatment");
        assert!(hit.flags.is_empty());
        let miss = oracle
            .answer(&AnswerContext { question: "do you want pictures of angular cheilitis?", ..ctx })
            .unwrap();
        assert_eq!(miss.flags, vec![flags::ORACLE_MISS.to_string()]);
        assert!(!miss.text.is_empty());
    }
}
