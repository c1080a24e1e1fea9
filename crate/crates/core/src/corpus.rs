//! Single-turn and multi-turn clarification datasets.
//!
//! Single-turn files are tab-separated with a header row. The loader locates
//! columns by name, so extra columns (as in the public ClariQ release) are
//! ignored:
//!
//! | column            | meaning                                  |
//! |-------------------|------------------------------------------|
//! | `topic_id`        | topic identifier                         |
//! | `facet_id`        | facet identifier, unique within a topic  |
//! | `initial_request` | the user's initial query                 |
//! | `facet_desc`      | the hidden information need              |
//! | `question`        | clarifying question asked by the system  |
//! | `answer`          | the user's answer                        |
//!
//! Multi-turn files hold one JSON object per line with the fields
//! `topic_id`, `facet_id`, `initial_request`, `facet_desc` and `turns`, where
//! each turn is `{"case": ..., "question": ..., "answer": ...}` and `case` is
//! one of `normal`, `repeat`, `off_topic`, `similar`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoding::derive_seed;
use crate::promptcodec::{self, SpecialMarkers};
use crate::text::{normalize_whitespace, tokenize};

pub const SINGLE_TURN_COLUMNS: [&str; 6] = [
    "topic_id",
    "facet_id",
    "initial_request",
    "facet_desc",
    "question",
    "answer",
];

pub const MAX_DEPTH: usize = 3;
pub const MAX_FAULTY_DEPTH: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: header is missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: empty file (no header row)")]
    NoHeader { path: PathBuf },
    #[error("{count} record(s) rejected; first: {first}")]
    Rejected { count: usize, first: Rejection },
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("no valid distractor for {0}: every pool answer belongs to the target's facet")]
    NoValidDistractor(NeedKey),
    #[error("empty distractor pool")]
    EmptyPool,
    #[error("write failed: {0}")]
    Write(#[from] io::Error),
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

/// Identifies one facet of one topic.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeedKey {
    pub topic_id: String,
    pub facet_id: String,
}

impl NeedKey {
    pub fn new(topic_id: impl Into<String>, facet_id: impl Into<String>) -> Self {
        Self {
            topic_id: topic_id.into(),
            facet_id: facet_id.into(),
        }
    }

    /// Whitespace-free query id used in qrels and run files.
    pub fn qid(&self) -> String {
        format!("{}-{}", self.topic_id, self.facet_id)
    }
}

impl fmt::Display for NeedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.topic_id, self.facet_id)
    }
}

/// The hidden intent the simulated user holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformationNeed {
    pub topic_id: String,
    pub facet_id: String,
    /// Initial request issued to the system.
    pub query: String,
    /// Facet description; the conditioning signal for answers.
    pub facet_desc: String,
}

fn required(field: &'static str, value: &str) -> Result<String, CorpusError> {
    let v = normalize_whitespace(value);
    if v.is_empty() {
        return Err(CorpusError::InvalidField {
            field,
            reason: "empty after whitespace normalization".into(),
        });
    }
    Ok(v)
}

impl InformationNeed {
    pub fn new(
        topic_id: &str,
        facet_id: &str,
        query: &str,
        facet_desc: &str,
    ) -> Result<Self, CorpusError> {
        Ok(Self {
            topic_id: required("topic_id", topic_id)?,
            facet_id: required("facet_id", facet_id)?,
            query: required("initial_request", query)?,
            facet_desc: required("facet_desc", facet_desc)?,
        })
    }

    pub fn key(&self) -> NeedKey {
        NeedKey::new(self.topic_id.clone(), self.facet_id.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub need: InformationNeed,
    pub question: String,
    pub answer: String,
}

impl QAExample {
    pub fn new(need: InformationNeed, question: &str, answer: &str) -> Result<Self, CorpusError> {
        Ok(Self {
            need,
            question: required("question", question)?,
            answer: required("answer", answer)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionCase {
    Normal,
    Repeat,
    OffTopic,
    Similar,
}

impl QuestionCase {
    pub const ALL: [QuestionCase; 4] = [Self::Normal, Self::Repeat, Self::OffTopic, Self::Similar];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Repeat => "repeat",
            Self::OffTopic => "off_topic",
            Self::Similar => "similar",
        }
    }

    /// Parses a case label. "unnecessary" questions are filed under `Similar`.
    pub fn parse(label: &str) -> Option<Self> {
        match label.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "normal" => Some(Self::Normal),
            "repeat" | "repetition" => Some(Self::Repeat),
            "off_topic" | "offtopic" => Some(Self::OffTopic),
            "similar" | "unnecessary" => Some(Self::Similar),
            _ => None,
        }
    }
}

impl fmt::Display for QuestionCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiTurnTurn {
    pub case: QuestionCase,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiTurnConversation {
    pub need: InformationNeed,
    pub turns: Vec<MultiTurnTurn>,
}

impl MultiTurnConversation {
    pub fn new(need: InformationNeed, turns: Vec<MultiTurnTurn>) -> Result<Self, CorpusError> {
        let depth = turns.len();
        if !(1..=MAX_DEPTH).contains(&depth) {
            return Err(CorpusError::InvalidField {
                field: "turns",
                reason: format!("depth {depth} out of range 1..={MAX_DEPTH}"),
            });
        }
        if turns.iter().any(|t| t.case != QuestionCase::Normal) && depth > MAX_FAULTY_DEPTH {
            return Err(CorpusError::InvalidField {
                field: "turns",
                reason: format!(
                    "conversation with a faulty question has depth {depth} > {MAX_FAULTY_DEPTH}"
                ),
            });
        }
        if matches!(turns[0].case, QuestionCase::Repeat | QuestionCase::Similar) {
            return Err(CorpusError::InvalidField {
                field: "turns",
                reason: format!("case `{}` needs a previous question", turns[0].case),
            });
        }
        let turns = turns
            .into_iter()
            .map(|t| {
                Ok(MultiTurnTurn {
                    case: t.case,
                    question: required("question", &t.question)?,
                    answer: required("answer", &t.answer)?,
                })
            })
            .collect::<Result<Vec<_>, CorpusError>>()?;
        Ok(Self { need, turns })
    }

    pub fn depth(&self) -> usize {
        self.turns.len()
    }

    /// True when any turn carries a faulty question.
    pub fn is_faulty(&self) -> bool {
        self.turns.iter().any(|t| t.case != QuestionCase::Normal)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_topics: usize,
    pub n_facets: usize,
    pub n_questions: usize,
    pub n_qa_pairs: usize,
}

/// Counts distinct topics, distinct (topic, facet) pairs, distinct question
/// texts and rows.
pub fn compute_stats(examples: &[QAExample]) -> DatasetStats {
    let topics: BTreeSet<&str> = examples.iter().map(|e| e.need.topic_id.as_str()).collect();
    let facets: BTreeSet<(&str, &str)> = examples
        .iter()
        .map(|e| (e.need.topic_id.as_str(), e.need.facet_id.as_str()))
        .collect();
    let questions: BTreeSet<&str> = examples.iter().map(|e| e.question.as_str()).collect();
    DatasetStats {
        n_topics: topics.len(),
        n_facets: facets.len(),
        n_questions: questions.len(),
        n_qa_pairs: examples.len(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MultiTurnStats {
    pub n_conversations: usize,
    pub n_normal: usize,
    pub n_faulty: usize,
    /// Faulty conversations by the case of their first faulty question.
    pub faulty_by_case: BTreeMap<String, usize>,
    pub by_depth: BTreeMap<usize, usize>,
}

pub fn compute_multi_turn_stats(convs: &[MultiTurnConversation]) -> MultiTurnStats {
    let mut s = MultiTurnStats {
        n_conversations: convs.len(),
        ..Default::default()
    };
    for c in convs {
        *s.by_depth.entry(c.depth()).or_default() += 1;
        match c.turns.iter().find(|t| t.case != QuestionCase::Normal) {
            Some(t) => {
                s.n_faulty += 1;
                *s.faulty_by_case.entry(t.case.to_string()).or_default() += 1;
            }
            None => s.n_normal += 1,
        }
    }
    s
}

/// A record that failed validation, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} ({}): {}", self.line, id, self.reason),
            None => write!(f, "line {}: {}", self.line, self.reason),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LoadMode {
    /// Invalid records are reported and skipped.
    #[default]
    Lenient,
    /// Any invalid record fails the load.
    Strict,
}

#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub items: Vec<T>,
    pub rejected: Vec<Rejection>,
}

impl<T> Loaded<T> {
    fn finish(self, mode: LoadMode) -> Result<Self, CorpusError> {
        if mode == LoadMode::Strict && !self.rejected.is_empty() {
            return Err(CorpusError::Rejected {
                count: self.rejected.len(),
                first: self.rejected[0].clone(),
            });
        }
        Ok(self)
    }
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a single-turn TSV file.
pub fn load_single_turn(path: &Path, mode: LoadMode) -> Result<Loaded<QAExample>, CorpusError> {
    let raw = read_file(path)?;
    parse_single_turn(&raw, path, mode)
}

pub fn parse_single_turn(
    raw: &str,
    path: &Path,
    mode: LoadMode,
) -> Result<Loaded<QAExample>, CorpusError> {
    let mut lines = raw.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break l,
            None => {
                return Err(CorpusError::NoHeader {
                    path: path.to_path_buf(),
                })
            }
        }
    };
    let names: Vec<&str> = header.trim_end_matches('\r').split('\t').map(str::trim).collect();
    let mut cols = [0usize; 6];
    for (slot, col) in cols.iter_mut().zip(SINGLE_TURN_COLUMNS) {
        *slot = names
            .iter()
            .position(|n| *n == col)
            .ok_or_else(|| CorpusError::MissingColumn {
                path: path.to_path_buf(),
                column: col.to_string(),
            })?;
    }

    let mut items = Vec::new();
    let mut rejected = Vec::new();
    let mut needs: HashMap<NeedKey, InformationNeed> = HashMap::new();
    for (idx, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        let get = |i: usize| fields.get(cols[i]).copied().unwrap_or("");
        let id = Some(format!("{}/{}", get(0).trim(), get(1).trim()));
        let built = InformationNeed::new(get(0), get(1), get(2), get(3))
            .and_then(|need| QAExample::new(need, get(4), get(5)));
        match built {
            Ok(ex) => {
                let key = ex.need.key();
                match needs.get(&key) {
                    Some(prev) if *prev != ex.need => rejected.push(Rejection {
                        line: lineno,
                        id,
                        reason: "conflicting initial_request/facet_desc for an existing (topic_id, facet_id)".into(),
                    }),
                    Some(_) => items.push(ex),
                    None => {
                        needs.insert(key, ex.need.clone());
                        items.push(ex);
                    }
                }
            }
            Err(e) => rejected.push(Rejection {
                line: lineno,
                id,
                reason: e.to_string(),
            }),
        }
    }
    Loaded { items, rejected }.finish(mode)
}

pub fn write_single_turn<W: Write>(examples: &[QAExample], mut out: W) -> Result<(), CorpusError> {
    writeln!(out, "{}", SINGLE_TURN_COLUMNS.join("\t"))?;
    for e in examples {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            e.need.topic_id, e.need.facet_id, e.need.query, e.need.facet_desc, e.question, e.answer
        )?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TurnRecord {
    case: String,
    question: String,
    answer: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConversationRecord {
    topic_id: String,
    facet_id: String,
    initial_request: String,
    facet_desc: String,
    turns: Vec<TurnRecord>,
}

fn conversation_from_record(rec: ConversationRecord) -> Result<MultiTurnConversation, CorpusError> {
    let need = InformationNeed::new(&rec.topic_id, &rec.facet_id, &rec.initial_request, &rec.facet_desc)?;
    let turns = rec
        .turns
        .into_iter()
        .map(|t| {
            let case = QuestionCase::parse(&t.case).ok_or_else(|| CorpusError::InvalidField {
                field: "case",
                reason: format!("unknown case label `{}`", t.case),
            })?;
            Ok(MultiTurnTurn {
                case,
                question: t.question,
                answer: t.answer,
            })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    MultiTurnConversation::new(need, turns)
}

pub fn load_multi_turn(
    path: &Path,
    mode: LoadMode,
) -> Result<Loaded<MultiTurnConversation>, CorpusError> {
    let raw = read_file(path)?;
    parse_multi_turn(&raw, mode)
}

pub fn parse_multi_turn(raw: &str, mode: LoadMode) -> Result<Loaded<MultiTurnConversation>, CorpusError> {
    let mut items = Vec::new();
    let mut rejected = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let rec: ConversationRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                rejected.push(Rejection {
                    line: lineno,
                    id: None,
                    reason: format!("malformed record: {e}"),
                });
                continue;
            }
        };
        let id = Some(format!("{}/{}", rec.topic_id, rec.facet_id));
        match conversation_from_record(rec) {
            Ok(c) => items.push(c),
            Err(e) => rejected.push(Rejection {
                line: lineno,
                id,
                reason: e.to_string(),
            }),
        }
    }
    Loaded { items, rejected }.finish(mode)
}

pub fn write_multi_turn<W: Write>(convs: &[MultiTurnConversation], mut out: W) -> Result<(), CorpusError> {
    for c in convs {
        let rec = ConversationRecord {
            topic_id: c.need.topic_id.clone(),
            facet_id: c.need.facet_id.clone(),
            initial_request: c.need.query.clone(),
            facet_desc: c.need.facet_desc.clone(),
            turns: c
                .turns
                .iter()
                .map(|t| TurnRecord {
                    case: t.case.to_string(),
                    question: t.question.clone(),
                    answer: t.answer.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Yes,
    No,
    Neutral,
}

/// Lowercases, skips leading punctuation and checks whether the first token is
/// exactly "yes" or "no".
pub fn polarity(answer: &str) -> Polarity {
    match tokenize(answer).first().map(String::as_str) {
        Some("yes") => Polarity::Yes,
        Some("no") => Polarity::No,
        _ => Polarity::Neutral,
    }
}

/// Precomputed pool for repeated distractor sampling.
#[derive(Debug)]
pub struct DistractorSampler<'a> {
    pool: &'a [QAExample],
    yes: Vec<usize>,
    no: Vec<usize>,
}

impl<'a> DistractorSampler<'a> {
    pub fn new(pool: &'a [QAExample]) -> Result<Self, CorpusError> {
        if pool.is_empty() {
            return Err(CorpusError::EmptyPool);
        }
        let mut yes = Vec::new();
        let mut no = Vec::new();
        for (i, e) in pool.iter().enumerate() {
            match polarity(&e.answer) {
                Polarity::Yes => yes.push(i),
                Polarity::No => no.push(i),
                Polarity::Neutral => {}
            }
        }
        Ok(Self { pool, yes, no })
    }

    /// Picks a different-facet answer, preferring the opposite yes/no polarity
    /// of the target. Deterministic in `seed`.
    pub fn sample(&self, target: &QAExample, seed: u64) -> Result<&'a str, CorpusError> {
        let pool = self.pool;
        let other_facet = |i: &usize| {
            let n = &pool[*i].need;
            n.topic_id != target.need.topic_id || n.facet_id != target.need.facet_id
        };
        let preferred: Vec<usize> = match polarity(&target.answer) {
            Polarity::Yes => self.no.iter().copied().filter(other_facet).collect(),
            Polarity::No => self.yes.iter().copied().filter(other_facet).collect(),
            Polarity::Neutral => Vec::new(),
        };
        let candidates = if preferred.is_empty() {
            (0..pool.len()).filter(other_facet).collect::<Vec<_>>()
        } else {
            preferred
        };
        if candidates.is_empty() {
            return Err(CorpusError::NoValidDistractor(target.need.key()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pick = candidates[rng.random_range(0..candidates.len())];
        Ok(pool[pick].answer.as_str())
    }
}

pub fn sample_distractor(target: &QAExample, pool: &[QAExample], seed: u64) -> Result<String, CorpusError> {
    DistractorSampler::new(pool)?
        .sample(target, seed)
        .map(str::to_owned)
}

/// One row of the double-head training file produced by `dataset distractors`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorRecord {
    pub topic_id: String,
    pub facet_id: String,
    pub initial_request: String,
    pub facet_desc: String,
    pub question: String,
    pub answer: String,
    pub distractor: String,
    /// Encoded sequence with the true answer.
    pub target_input: String,
    /// Encoded sequence with the distractor answer.
    pub distractor_input: String,
}

/// Builds training rows with one sampled distractor each; row `i` uses the
/// seed derived from `(seed, i)`.
pub fn build_distractor_records(
    examples: &[QAExample],
    seed: u64,
    markers: &SpecialMarkers,
) -> Result<Vec<DistractorRecord>, CorpusError> {
    let sampler = DistractorSampler::new(examples)?;
    let mut out = Vec::with_capacity(examples.len());
    for (i, ex) in examples.iter().enumerate() {
        let distractor = sampler.sample(ex, derive_seed(seed, i as u64))?;
        let enc = |a: &str| {
            promptcodec::encode_single(&ex.need, &ex.question, Some(a), markers)
                .map(|s| s.text)
                .map_err(|e| CorpusError::InvalidField {
                    field: "question",
                    reason: e.to_string(),
                })
        };
        out.push(DistractorRecord {
            topic_id: ex.need.topic_id.clone(),
            facet_id: ex.need.facet_id.clone(),
            initial_request: ex.need.query.clone(),
            facet_desc: ex.need.facet_desc.clone(),
            question: ex.question.clone(),
            answer: ex.answer.clone(),
            distractor: distractor.to_string(),
            target_input: enc(&ex.answer)?,
            distractor_input: enc(distractor)?,
        });
    }
    Ok(out)
}
