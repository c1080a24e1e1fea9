//! Role-tagged conversation history.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into() }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self { role: Role::System, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HistoryError {
    #[error("history is empty; it must start with the user's initial query")]
    Empty,
    #[error("turn {index} has role {found:?}, expected {expected:?}")]
    Alternation { index: usize, expected: Role, found: Role },
}

/// The initial user query followed by alternating system question / user
/// answer turns.
///
/// `turns` is public so callers can build arbitrary sequences; [`validate`]
/// reports whether the alternation invariant holds.
///
/// [`validate`]: ConversationHistory::validate
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationHistory {
    pub turns: Vec<Turn>,
}

impl ConversationHistory {
    pub fn new(initial_query: impl Into<String>) -> Self {
        Self { turns: vec![Turn::user(initial_query)] }
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn validate(&self) -> Result<(), HistoryError> {
        if self.turns.is_empty() {
            return Err(HistoryError::Empty);
        }
        for (index, turn) in self.turns.iter().enumerate() {
            let expected = if index.is_multiple_of(2) { Role::User } else { Role::System };
            if turn.role != expected {
                return Err(HistoryError::Alternation { index, expected, found: turn.role });
            }
        }
        Ok(())
    }

    pub fn initial_query(&self) -> Option<&str> {
        self.turns.first().map(|t| t.text.as_str())
    }

    pub fn last_role(&self) -> Option<Role> {
        self.turns.last().map(|t| t.role)
    }

    /// Appends a system question; the last turn must be a user turn.
    pub fn push_question(&mut self, question: impl Into<String>) -> Result<(), HistoryError> {
        self.push(Turn::system(question))
    }

    /// Appends a user answer; the last turn must be a system question.
    pub fn push_answer(&mut self, answer: impl Into<String>) -> Result<(), HistoryError> {
        self.push(Turn::user(answer))
    }

    fn push(&mut self, turn: Turn) -> Result<(), HistoryError> {
        let index = self.turns.len();
        if index == 0 {
            return Err(HistoryError::Empty);
        }
        let expected = if index.is_multiple_of(2) { Role::User } else { Role::System };
        if turn.role != expected {
            return Err(HistoryError::Alternation { index, expected, found: turn.role });
        }
        self.turns.push(turn);
        Ok(())
    }

    /// Completed (question, answer) pairs after the initial query. A trailing
    /// unanswered question is not included.
    pub fn pairs(&self) -> Vec<(&str, &str)> {
        self.turns
            .get(1..)
            .unwrap_or_default()
            .chunks_exact(2)
            .map(|c| (c[0].text.as_str(), c[1].text.as_str()))
            .collect()
    }

    pub fn system_questions(&self) -> impl Iterator<Item = &str> {
        self.turns
            .iter()
            .filter(|t| t.role == Role::System)
            .map(|t| t.text.as_str())
    }

    pub fn last_user_answer(&self) -> Option<&str> {
        if self.turns.len() < 3 {
            return None;
        }
        self.turns
            .iter()
            .rev()
            .find(|t| t.role == Role::User)
            .map(|t| t.text.as_str())
    }

    /// Drops everything after the initial query.
    pub fn reset(&mut self) {
        self.turns.truncate(1);
    }
}
