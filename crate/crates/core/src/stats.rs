//! Significance tests: the trinomial test over win/loss/tie counts and the
//! paired two-sided t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::factorial::ln_factorial;

/// Largest `n` for which the trinomial distribution is enumerated exactly.
pub const EXACT_LIMIT: u64 = 1000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("at least one judgment is required")]
    NoJudgments,
    #[error("samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("at least two paired observations are required, got {0}")]
    TooFewObservations(usize),
    #[error("item {item} has {count} votes; exactly two are required")]
    VoteCount { item: String, count: usize },
    #[error("unknown vote '{vote}' for item {item}; expected A or B")]
    UnknownVote { item: String, vote: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JudgmentTriple {
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
}

impl JudgmentTriple {
    pub fn new(wins: u64, losses: u64, ties: u64) -> Self {
        Self { wins, losses, ties }
    }

    pub fn n(&self) -> u64 {
        self.wins + self.losses + self.ties
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    #[default]
    TwoSided,
    OneSided,
}

/// How the two-sided p-value is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoSidedMethod {
    /// `min(1, 2 * P(D >= |d|))`
    #[default]
    DoubleTail,
    /// `P(|D| >= |d|)`
    BothTails,
}

/// Exact null distribution of `D = W - L` over `n` trials with
/// `P(win) = P(loss) = (1 - p_tie) / 2`. Index `d + n` holds `P(D = d)`.
pub fn trinomial_difference_pmf(n: u64, p_tie: f64) -> Vec<f64> {
    let p_side = (1.0 - p_tie) / 2.0;
    let ln_n = ln_factorial(n);
    let (lw, lt) = (p_side.ln(), p_tie.ln());
    let term = |count: u64, ln_p: f64| if count == 0 { 0.0 } else { count as f64 * ln_p };
    let mut pmf = vec![0.0; (2 * n + 1) as usize];
    for w in 0..=n {
        for l in 0..=(n - w) {
            let t = n - w - l;
            if (p_side == 0.0 && w + l > 0) || (p_tie == 0.0 && t > 0) {
                continue;
            }
            let ln = ln_n - ln_factorial(w) - ln_factorial(l) - ln_factorial(t) + term(w + l, lw) + term(t, lt);
            pmf[(w + n - l) as usize] += ln.exp();
        }
    }
    pmf
}

fn upper_tail(pmf: &[f64], n: u64, d: u64) -> f64 {
    pmf[(n + d) as usize..].iter().sum::<f64>().min(1.0)
}

/// Trinomial test of equal win and loss rates with the tie rate estimated
/// as `ties / n`.
pub fn trinomial_test(triple: JudgmentTriple, sidedness: Sidedness) -> Result<TestResult, StatsError> {
    trinomial_test_with(triple, sidedness, TwoSidedMethod::default())
}

pub fn trinomial_test_with(
    triple: JudgmentTriple,
    sidedness: Sidedness,
    method: TwoSidedMethod,
) -> Result<TestResult, StatsError> {
    let n = triple.n();
    if n == 0 {
        return Err(StatsError::NoJudgments);
    }
    let p_tie = triple.ties as f64 / n as f64;
    let signed = triple.wins as f64 - triple.losses as f64;
    let d = triple.wins.abs_diff(triple.losses);
    let (one, both, label) = if n <= EXACT_LIMIT {
        let pmf = trinomial_difference_pmf(n, p_tie);
        let one = upper_tail(&pmf, n, d);
        let inner: f64 = if d == 0 { 0.0 } else { pmf[(n - d + 1) as usize..(n + d) as usize].iter().sum() };
        (one, (1.0 - inner).clamp(0.0, 1.0), "trinomial (exact)")
    } else {
        log::warn!("n = {n} exceeds {EXACT_LIMIT}; using the normal approximation");
        let sd = (n as f64 * (1.0 - p_tie)).sqrt();
        if sd == 0.0 {
            (1.0, 1.0, "trinomial (normal approximation)")
        } else {
            let z = Normal::standard();
            let one = if d == 0 { 1.0 } else { z.sf((d as f64 - 0.5) / sd) };
            let both = if d == 0 { 1.0 } else { 2.0 * one };
            (one, both.min(1.0), "trinomial (normal approximation)")
        }
    };
    let p_value = match (sidedness, method) {
        (Sidedness::OneSided, _) => one,
        (Sidedness::TwoSided, TwoSidedMethod::DoubleTail) => (2.0 * one).min(1.0),
        (Sidedness::TwoSided, TwoSidedMethod::BothTails) => both,
    };
    let side = match sidedness {
        Sidedness::TwoSided => "two-sided",
        Sidedness::OneSided => "one-sided",
    };
    Ok(TestResult { statistic: signed, p_value, method: format!("{label}, {side}") })
}

/// Reported instead of zero when the differences have no spread but a
/// non-zero mean.
pub const P_FLOOR: f64 = f64::MIN_POSITIVE;

pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooFewObservations(n));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let method = "paired t-test, two-sided".to_string();
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if var <= (f64::EPSILON * scale).powi(2) {
        return Ok(if mean.abs() <= f64::EPSILON * scale || mean == 0.0 {
            TestResult { statistic: 0.0, p_value: 1.0, method }
        } else {
            TestResult { statistic: mean.signum() * f64::INFINITY, p_value: P_FLOOR, method }
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("n >= 2 gives positive degrees of freedom");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TestResult { statistic: t, p_value: p, method })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Vote {
    A,
    B,
}

impl Vote {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "A" | "a" => Some(Self::A),
            "B" | "b" => Some(Self::B),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub item_id: String,
    pub votes: Vec<Vote>,
}

/// Both votes for A is a win, both for B a loss, a split a tie.
pub fn interrater_pairing(items: &[Annotation]) -> Result<JudgmentTriple, StatsError> {
    let mut t = JudgmentTriple::default();
    for item in items {
        match item.votes.as_slice() {
            [Vote::A, Vote::A] => t.wins += 1,
            [Vote::B, Vote::B] => t.losses += 1,
            [_, _] => t.ties += 1,
            other => return Err(StatsError::VoteCount { item: item.item_id.clone(), count: other.len() }),
        }
    }
    Ok(t)
}

#[derive(Deserialize)]
struct JudgmentRecord {
    item_id: serde_json::Value,
    vote_1: Option<String>,
    vote_2: Option<String>,
}

/// Judgment records with fields `item_id`, `vote_1`, `vote_2`, either as
/// JSON lines or as a tab-separated file with that header.
pub fn parse_judgments(raw: &str) -> Result<Vec<Annotation>, StatsError> {
    let mut lines = raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
    let json = lines.peek().is_some_and(|(_, l)| l.trim_start().starts_with('{'));
    let mut out = Vec::new();
    let mut push = |line: usize, item: String, votes: Vec<Option<&str>>| -> Result<(), StatsError> {
        let mut parsed = Vec::new();
        for v in votes.into_iter().flatten().filter(|v| !v.trim().is_empty()) {
            parsed.push(Vote::parse(v).ok_or_else(|| StatsError::UnknownVote { item: item.clone(), vote: v.to_string() })?);
        }
        if item.is_empty() {
            return Err(StatsError::Parse { line, reason: "empty item_id".into() });
        }
        out.push(Annotation { item_id: item, votes: parsed });
        Ok(())
    };
    if json {
        for (i, l) in lines {
            let r: JudgmentRecord =
                serde_json::from_str(l).map_err(|e| StatsError::Parse { line: i + 1, reason: e.to_string() })?;
            let item = match r.item_id {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            push(i + 1, item, vec![r.vote_1.as_deref(), r.vote_2.as_deref()])?;
        }
    } else {
        let (hline, header) = lines.next().ok_or(StatsError::NoJudgments)?;
        let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
        let find = |name: &str| {
            cols.iter()
                .position(|c| *c == name)
                .ok_or_else(|| StatsError::Parse { line: hline + 1, reason: format!("missing column {name}") })
        };
        let (ci, c1, c2) = (find("item_id")?, find("vote_1")?, find("vote_2")?);
        for (i, l) in lines {
            let f: Vec<&str> = l.split('\t').collect();
            push(i + 1, f.get(ci).unwrap_or(&"").trim().to_string(), vec![f.get(c1).copied(), f.get(c2).copied()])?;
        }
    }
    Ok(out)
}
