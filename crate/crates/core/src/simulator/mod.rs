//! Session engine: a hidden need, a running history and a pluggable answer
//! backend.

mod batch;
mod external;
mod ngram_backend;
mod oracle;
pub mod rules;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conversation::{ConversationHistory, HistoryError, Role};
use crate::corpus::InformationNeed;
use crate::decoding::{derive_seed, DecodingError, DecodingParams};

pub use batch::{read_answer_records, run_batch, write_answer_records, AnswerRecord, BatchInput, BatchOptions, HistoryMode};
pub use external::ExternalBackend;
pub use ngram_backend::{NGramBackend, PromptLayout};
pub use oracle::CorpusOracle;
pub use rules::{classify_question, rule_based_answer, RuleBasedBackend, RuleConfig};

/// Substituted for empty backend output.
pub const UNCERTAIN_ANSWER: &str = "i don't know";

pub mod flags {
    pub const EMPTY_OUTPUT: &str = "empty_output";
    pub const ORACLE_MISS: &str = "oracle_miss";
    pub const BACKEND_ERROR: &str = "backend_error";
    pub const SKIPPED: &str = "skipped_after_error";
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("information need {0} has an empty query")]
    EmptyQuery(String),
    #[error("backend '{backend}' failed the handshake: {message}")]
    Handshake { backend: String, message: String },
    #[error("backend '{backend}' failed: {message}")]
    Backend { backend: String, message: String },
    #[error("session history must end with a user turn before a question is asked")]
    NotUsersTurn,
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Params(#[from] DecodingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerBackendKind {
    CorpusOracle,
    RuleBased,
    NGram,
    External,
}

impl AnswerBackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::CorpusOracle => "corpus_oracle",
            Self::RuleBased => "rule_based",
            Self::NGram => "n_gram",
            Self::External => "external",
        }
    }
}

/// Everything a backend may condition on for one answer.
#[derive(Debug, Clone, Copy)]
pub struct AnswerContext<'a> {
    pub need: &'a InformationNeed,
    /// History up to and including the last user turn; the question is not
    /// yet appended.
    pub history: &'a ConversationHistory,
    pub question: &'a str,
    /// Parameters with the per-turn seed already derived.
    pub params: &'a DecodingParams,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BackendAnswer {
    pub text: String,
    pub flags: Vec<String>,
}

impl BackendAnswer {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into(), flags: Vec::new() }
    }

    pub fn flagged(mut self, flag: &str) -> Self {
        self.flags.push(flag.to_string());
        self
    }
}

pub trait AnswerBackend: Send + Sync {
    fn name(&self) -> &str;

    fn kind(&self) -> AnswerBackendKind;

    /// Whether several sessions may call `answer` at the same time.
    fn supports_concurrent(&self) -> bool {
        true
    }

    fn ready(&self) -> Result<(), SimError> {
        Ok(())
    }

    fn answer(&self, ctx: &AnswerContext<'_>) -> Result<BackendAnswer, SimError>;
}

pub struct Session {
    need: InformationNeed,
    history: ConversationHistory,
    backend: Arc<dyn AnswerBackend>,
    params: DecodingParams,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("need", &self.need)
            .field("history", &self.history)
            .field("backend", &self.backend.name())
            .field("params", &self.params)
            .finish()
    }
}

pub fn open_session(
    need: InformationNeed,
    backend: Arc<dyn AnswerBackend>,
    params: DecodingParams,
) -> Result<Session, SimError> {
    if need.query.trim().is_empty() {
        return Err(SimError::EmptyQuery(need.key().to_string()));
    }
    params.validate()?;
    backend.ready()?;
    let history = ConversationHistory::new(need.query.clone());
    Ok(Session { need, history, backend, params })
}

impl Session {
    pub fn need(&self) -> &InformationNeed {
        &self.need
    }

    pub fn history(&self) -> &ConversationHistory {
        &self.history
    }

    pub fn params(&self) -> &DecodingParams {
        &self.params
    }

    pub fn backend(&self) -> &dyn AnswerBackend {
        self.backend.as_ref()
    }

    /// 1-based index of the next question.
    pub fn next_turn(&self) -> usize {
        self.history.pairs().len() + 1
    }

    pub fn answer(&mut self, question: &str) -> Result<String, SimError> {
        self.answer_detailed(question).map(|a| a.text)
    }

    /// Asks one question. On failure the history is left untouched.
    pub fn answer_detailed(&mut self, question: &str) -> Result<BackendAnswer, SimError> {
        if self.history.last_role() != Some(Role::User) {
            return Err(SimError::NotUsersTurn);
        }
        self.history.validate()?;
        let params = self.params.with_seed(derive_seed(self.params.seed, self.next_turn() as u64));
        let ctx = AnswerContext { need: &self.need, history: &self.history, question, params: &params };
        let mut out = self.backend.answer(&ctx)?;
        if out.text.trim().is_empty() {
            out.text = UNCERTAIN_ANSWER.to_string();
            out.flags.push(flags::EMPTY_OUTPUT.to_string());
        }
        self.history.push_question(question)?;
        self.history.push_answer(out.text.clone())?;
        Ok(out)
    }

    /// Appends a question/answer pair without consulting the backend.
    pub fn record_turn(&mut self, question: &str, answer: &str) -> Result<(), SimError> {
        self.history.push_question(question)?;
        self.history.push_answer(answer)?;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.history.reset();
    }
}
