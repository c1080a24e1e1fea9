use std::io::{BufRead, Write};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rules::{classify_question, RuleConfig};
use super::{flags, open_session, AnswerBackend, SimError};
use crate::conversation::ConversationHistory;
use crate::corpus::{InformationNeed, MultiTurnConversation, QAExample, QuestionCase};
use crate::decoding::{derive_seed, DecodingParams};

/// One simulated answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub topic_id: String,
    pub facet_id: String,
    /// 1-based position of the question in its conversation.
    pub turn: usize,
    pub question: String,
    pub answer: String,
    pub backend: String,
    pub case: QuestionCase,
    #[serde(default)]
    pub flags: Vec<String>,
    /// Index of the source conversation for multi-turn input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversation: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AnswerRecord {
    pub fn is_failure(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum BatchInput<'a> {
    SingleTurn(&'a [QAExample]),
    MultiTurn(&'a [MultiTurnConversation]),
}

impl BatchInput<'_> {
    pub fn len(&self) -> usize {
        match self {
            Self::SingleTurn(x) => x.len(),
            Self::MultiTurn(x) => x.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// History fed to later turns of a multi-turn conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryMode {
    /// Earlier turns carry the dataset's reference answers.
    #[default]
    Reference,
    /// Earlier turns carry the simulator's own answers.
    Simulated,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOptions {
    pub history_mode: HistoryMode,
    pub record_latency: bool,
    /// Used to label single-turn records with a detected case.
    pub rules: RuleConfig,
}

/// Answers every question of the dataset. Records come out in dataset order
/// whether or not the backend runs sessions in parallel; item `i` is seeded
/// with `derive_seed(params.seed, i)`.
pub fn run_batch(
    input: BatchInput<'_>,
    backend: Arc<dyn AnswerBackend>,
    params: &DecodingParams,
    opts: &BatchOptions,
) -> Result<Vec<AnswerRecord>, SimError> {
    params.validate()?;
    backend.ready()?;
    let analyzer = opts.rules.analyzer();
    let single = |(i, e): (usize, &QAExample)| -> Vec<AnswerRecord> {
        let case = classify_question(
            &e.need,
            &ConversationHistory::new(e.need.query.clone()),
            &e.question,
            &opts.rules,
            &analyzer,
        );
        let p = params.with_seed(derive_seed(params.seed, i as u64));
        run_conversation(&e.need, &[(e.question.as_str(), e.answer.as_str(), case)], None, &backend, p, opts)
    };
    let multi = |(i, c): (usize, &MultiTurnConversation)| -> Vec<AnswerRecord> {
        let turns: Vec<(&str, &str, QuestionCase)> =
            c.turns.iter().map(|t| (t.question.as_str(), t.answer.as_str(), t.case)).collect();
        let p = params.with_seed(derive_seed(params.seed, i as u64));
        run_conversation(&c.need, &turns, Some(i), &backend, p, opts)
    };
    let parallel = backend.supports_concurrent();
    let nested: Vec<Vec<AnswerRecord>> = match input {
        BatchInput::SingleTurn(xs) if parallel => xs.par_iter().enumerate().map(single).collect(),
        BatchInput::SingleTurn(xs) => xs.iter().enumerate().map(single).collect(),
        BatchInput::MultiTurn(xs) if parallel => xs.par_iter().enumerate().map(multi).collect(),
        BatchInput::MultiTurn(xs) => xs.iter().enumerate().map(multi).collect(),
    };
    Ok(nested.into_iter().flatten().collect())
}

fn run_conversation(
    need: &InformationNeed,
    turns: &[(&str, &str, QuestionCase)],
    conversation: Option<usize>,
    backend: &Arc<dyn AnswerBackend>,
    params: DecodingParams,
    opts: &BatchOptions,
) -> Vec<AnswerRecord> {
    let record = |turn: usize, question: &str, case: QuestionCase| AnswerRecord {
        topic_id: need.topic_id.clone(),
        facet_id: need.facet_id.clone(),
        turn,
        question: question.to_string(),
        answer: String::new(),
        backend: backend.name().to_string(),
        case,
        flags: Vec::new(),
        conversation,
        latency_ms: None,
        error: None,
    };
    let mut out = Vec::with_capacity(turns.len());
    let mut session = match open_session(need.clone(), Arc::clone(backend), params) {
        Ok(s) => s,
        Err(e) => {
            for (i, (q, _, case)) in turns.iter().enumerate() {
                let mut r = record(i + 1, q, *case);
                r.flags.push(flags::BACKEND_ERROR.to_string());
                r.error = Some(e.to_string());
                out.push(r);
            }
            return out;
        }
    };
    let mut broken = false;
    for (i, (q, reference, case)) in turns.iter().enumerate() {
        let mut r = record(i + 1, q, *case);
        if broken {
            r.flags.push(flags::SKIPPED.to_string());
            r.error = Some("an earlier turn of this conversation failed".to_string());
            out.push(r);
            continue;
        }
        let started = Instant::now();
        let result = session.answer_detailed(q);
        if opts.record_latency {
            r.latency_ms = Some(started.elapsed().as_secs_f64() * 1000.0);
        }
        match result {
            Ok(a) => {
                r.answer = a.text;
                r.flags = a.flags;
                if opts.history_mode == HistoryMode::Reference {
                    if let Some(last) = session.history.turns.last_mut() {
                        last.text = reference.to_string();
                    }
                }
            }
            Err(e) => {
                r.flags.push(flags::BACKEND_ERROR.to_string());
                r.error = Some(e.to_string());
                match opts.history_mode {
                    HistoryMode::Reference => {
                        if session.record_turn(q, reference).is_err() {
                            broken = true;
                        }
                    }
                    HistoryMode::Simulated => broken = true,
                }
            }
        }
        out.push(r);
    }
    out
}

pub fn write_answer_records<W: Write>(records: &[AnswerRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Parses a record stream, skipping blank lines. Errors carry the 1-based
/// line number.
pub fn read_answer_records<R: BufRead>(input: R) -> Result<Vec<AnswerRecord>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| (i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| (i + 1, e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::MultiTurnTurn;
    use crate::simulator::{AnswerBackendKind, AnswerContext, BackendAnswer, CorpusOracle, RuleBasedBackend};

    fn examples() -> Vec<QAExample> {
        let a = InformationNeed::new("1", "F1", "dieting", "dieting tips for teenagers").unwrap();
        let b = InformationNeed::new("1", "F2", "dieting", "low carb diet recipes").unwrap();
        vec![
            QAExample::new(a.clone(), "are you looking for dieting tips?", "yes for teenagers").unwrap(),
            QAExample::new(b, "are you looking for dieting tips?", "no i want recipes").unwrap(),
            QAExample::new(a, "do you want recipes?", "no tips for teenagers").unwrap(),
        ]
    }

    struct FailOn(&'static str);

    impl AnswerBackend for FailOn {
        fn name(&self) -> &str {
            "fail-on"
        }
        fn kind(&self) -> AnswerBackendKind {
            AnswerBackendKind::External
        }
        fn answer(&self, ctx: &AnswerContext<'_>) -> Result<BackendAnswer, SimError> {
            if ctx.question == self.0 {
                return Err(SimError::Backend { backend: "fail-on".into(), message: "boom".into() });
            }
            Ok(BackendAnswer::new(format!("ok {}", ctx.history.len())))
        }
    }

    #[test]
    fn oracle_reproduces_references_in_order() {
        let ex = examples();
        let recs = run_batch(
            BatchInput::SingleTurn(&ex),
            Arc::new(CorpusOracle::new(&ex)),
            &DecodingParams::default(),
            &BatchOptions::default(),
        )
        .unwrap();
        let got: Vec<&str> = recs.iter().map(|r| r.answer.as_str()).collect();
        let want: Vec<&str> = ex.iter().map(|e| e.answer.as_str()).collect();
        assert_eq!(got, want);
        assert!(recs.iter().all(|r| r.flags.is_empty() && r.turn == 1 && r.backend == "oracle"));
    }

    #[test]
    fn empty_dataset_gives_empty_stream() {
        let recs = run_batch(
            BatchInput::SingleTurn(&[]),
            Arc::new(RuleBasedBackend::default()),
            &DecodingParams::default(),
            &BatchOptions::default(),
        )
        .unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn one_failing_record_does_not_affect_others() {
        let ex = examples();
        let recs = run_batch(
            BatchInput::SingleTurn(&ex),
            Arc::new(FailOn("do you want recipes?")),
            &DecodingParams::default(),
            &BatchOptions::default(),
        )
        .unwrap();
        assert_eq!(recs.len(), 3);
        assert!(!recs[0].is_failure() && !recs[1].is_failure());
        assert!(recs[2].is_failure());
        assert_eq!(recs[2].flags, vec![flags::BACKEND_ERROR.to_string()]);
    }

    fn conversation() -> MultiTurnConversation {
        let need = InformationNeed::new("7", "F1", "hobby stores", "hobby stores that sell model trains").unwrap();
        let t = |case, q: &str, a: &str| MultiTurnTurn { case, question: q.into(), answer: a.into() };
        MultiTurnConversation::new(
            need,
            vec![
                t(QuestionCase::Normal, "q1?", "a1"),
                t(QuestionCase::Normal, "q2?", "a2"),
                t(QuestionCase::Normal, "q3?", "a3"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn reference_history_continues_past_failures() {
        let convs = vec![conversation()];
        let recs = run_batch(
            BatchInput::MultiTurn(&convs),
            Arc::new(FailOn("q2?")),
            &DecodingParams::default(),
            &BatchOptions::default(),
        )
        .unwrap();
        assert_eq!(recs.iter().map(|r| r.turn).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(recs[1].is_failure());
        assert_eq!(recs[2].answer, "ok 5");
        assert_eq!(recs[2].case, QuestionCase::Normal);
        assert_eq!(recs[2].conversation, Some(0));

        let simulated = BatchOptions { history_mode: HistoryMode::Simulated, ..BatchOptions::default() };
        let recs = run_batch(BatchInput::MultiTurn(&convs), Arc::new(FailOn("q2?")), &DecodingParams::default(), &simulated)
            .unwrap();
        assert_eq!(recs[2].flags, vec![flags::SKIPPED.to_string()]);
    }

    #[test]
    fn records_round_trip_through_jsonl() {
        let ex = examples();
        let opts = BatchOptions { record_latency: true, ..BatchOptions::default() };
        let recs = run_batch(BatchInput::SingleTurn(&ex), Arc::new(RuleBasedBackend::default()), &DecodingParams::default(), &opts)
            .unwrap();
        let mut buf = Vec::new();
        write_answer_records(&recs, &mut buf).unwrap();
        let back = read_answer_records(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
        let first: serde_json::Value = serde_json::from_slice(buf.split(|b| *b == b'\n').next().unwrap()).unwrap();
        for key in ["topic_id", "facet_id", "turn", "question", "answer", "backend", "case", "flags"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
    }
}
