use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnswerBackend, AnswerBackendKind, AnswerContext, BackendAnswer, SimError};
use crate::conversation::ConversationHistory;
use crate::corpus::{MultiTurnConversation, QAExample};
use crate::decoding::{train_ngram, DecodingError, NGramModel};
use crate::promptcodec::{encode_multi, encode_single, CodecError, MarkedSequence, SpecialMarkers};

/// Which input layout the prompt uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptLayout {
    Single,
    Multi,
    /// Single-turn layout for the first question, history-aware afterwards.
    #[default]
    Auto,
}

#[derive(Debug, Clone)]
pub struct NGramBackend {
    model: Arc<NGramModel>,
    markers: SpecialMarkers,
    layout: PromptLayout,
}

impl NGramBackend {
    pub fn new(model: Arc<NGramModel>, markers: SpecialMarkers) -> Self {
        Self { model, markers, layout: PromptLayout::Auto }
    }

    pub fn with_layout(mut self, layout: PromptLayout) -> Self {
        self.layout = layout;
        self
    }

    pub fn model(&self) -> &NGramModel {
        &self.model
    }

    fn prompt(&self, ctx: &AnswerContext<'_>) -> Result<MarkedSequence, CodecError> {
        let multi = match self.layout {
            PromptLayout::Single => false,
            PromptLayout::Multi => true,
            PromptLayout::Auto => !ctx.history.pairs().is_empty(),
        };
        if multi {
            encode_multi(ctx.need, ctx.history, ctx.question, None, &self.markers)
        } else {
            encode_single(ctx.need, ctx.question, None, &self.markers)
        }
    }
}

/// Encodes every single-turn example and every conversation turn (with its
/// reference history) as a complete training sequence.
pub fn training_sequences(
    examples: &[QAExample],
    convs: &[MultiTurnConversation],
    markers: &SpecialMarkers,
) -> Result<Vec<MarkedSequence>, CodecError> {
    let mut out = Vec::with_capacity(examples.len());
    for e in examples {
        out.push(encode_single(&e.need, &e.question, Some(&e.answer), markers)?);
    }
    for c in convs {
        let mut h = ConversationHistory::new(c.need.query.clone());
        for (i, t) in c.turns.iter().enumerate() {
            let seq = if i == 0 {
                encode_single(&c.need, &t.question, Some(&t.answer), markers)?
            } else {
                encode_multi(&c.need, &h, &t.question, Some(&t.answer), markers)?
            };
            out.push(seq);
            h.push_question(t.question.clone())?;
            h.push_answer(t.answer.clone())?;
        }
    }
    Ok(out)
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Decoding(#[from] DecodingError),
}

impl NGramBackend {
    pub fn train(
        examples: &[QAExample],
        convs: &[MultiTurnConversation],
        order: usize,
        alpha: f64,
        markers: SpecialMarkers,
    ) -> Result<Self, TrainError> {
        let seqs = training_sequences(examples, convs, &markers)?;
        let model = train_ngram(&seqs, order, alpha)?;
        Ok(Self::new(Arc::new(model), markers))
    }
}

impl AnswerBackend for NGramBackend {
    fn name(&self) -> &str {
        "ngram"
    }

    fn kind(&self) -> AnswerBackendKind {
        AnswerBackendKind::NGram
    }

    fn answer(&self, ctx: &AnswerContext<'_>) -> Result<BackendAnswer, SimError> {
        let fail = |e: &dyn std::fmt::Display| SimError::Backend { backend: self.name().to_string(), message: e.to_string() };
        let prompt = self.prompt(ctx).map_err(|e| fail(&e))?;
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.params.seed);
        let text = self
            .model
            .generate(&prompt, &self.markers, ctx.params, &mut rng)
            .map_err(|e| fail(&e))?;
        Ok(BackendAnswer::new(text))
    }
}
