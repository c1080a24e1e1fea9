use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::protocol::{GenerateRequest, HistoryTurn};
use super::{Bridge, BridgeOptions, TransportSpec};
use crate::conversation::Role;
use crate::decoding::DecodingParams;

const CONCURRENT_REQUESTS: usize = 4;
/// Below this single-request latency the timing comparison is noise.
const MIN_MEASURABLE: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Warn,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub backend: Option<String>,
    pub checks: Vec<CheckResult>,
}

impl ConformanceReport {
    fn push(&mut self, name: &str, status: CheckStatus, detail: impl Into<String>) {
        self.checks.push(CheckResult { name: name.to_string(), status, detail: detail.into() });
    }

    pub fn status(&self, name: &str) -> Option<CheckStatus> {
        self.checks.iter().find(|c| c.name == name).map(|c| c.status)
    }

    /// No check failed; warnings are allowed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }
}

fn probe(id: String, seed: u64) -> GenerateRequest {
    GenerateRequest {
        id,
        need: "find an online world atlas with country maps".into(),
        query: "online world atlas".into(),
        history: vec![
            HistoryTurn { role: Role::System, text: "are you interested in satellite maps?".into() },
            HistoryTurn { role: Role::User, text: "no, i want country maps".into() },
        ],
        question: "do you want maps of a specific country?".into(),
        params: DecodingParams { seed, ..DecodingParams::default() },
        marked_sequence: None,
    }
}

/// Connects, then checks handshake, single request, concurrency (when
/// claimed), malformed-input resilience, determinism under a fixed seed and
/// clean shutdown.
pub fn conformance_suite(spec: &TransportSpec, options: BridgeOptions) -> ConformanceReport {
    let mut report = ConformanceReport::default();
    let bridge = match Bridge::connect(spec, options) {
        Ok(b) => b,
        Err(e) => {
            report.push("handshake", CheckStatus::Fail, e.to_string());
            return report;
        }
    };
    let d = bridge.descriptor().clone();
    report.backend = Some(d.name.clone());
    report.push(
        "handshake",
        CheckStatus::Pass,
        format!(
            "name={} version={} concurrent={} logprobs={}",
            d.name, d.protocol_version, d.capabilities.concurrent, d.capabilities.logprobs
        ),
    );

    let single_latency = check_single(&bridge, &mut report);
    let bridge = Arc::new(bridge);
    check_concurrency(&bridge, single_latency, &mut report);
    check_malformed(&bridge, &mut report);
    check_determinism(&bridge, &mut report);

    match Arc::try_unwrap(bridge) {
        Ok(b) => {
            if b.shutdown(Duration::from_secs(2)) {
                report.push("shutdown", CheckStatus::Pass, "backend exited after shutdown");
            } else {
                report.push("shutdown", CheckStatus::Warn, "backend had to be killed after shutdown");
            }
        }
        Err(_) => report.push("shutdown", CheckStatus::Skip, "bridge still shared"),
    }
    report
}

fn check_single(bridge: &Bridge, report: &mut ConformanceReport) -> Option<Duration> {
    let id = bridge.next_id();
    let started = Instant::now();
    match bridge.request(&probe(id.clone(), 7)) {
        Ok(resp) if resp.id != id => {
            report.push("single_request", CheckStatus::Fail, format!("id {} answered as {}", id, resp.id));
            None
        }
        Ok(resp) => {
            let elapsed = started.elapsed();
            match resp.into_result() {
                Ok(a) if !a.trim().is_empty() => {
                    report.push("single_request", CheckStatus::Pass, format!("answered in {elapsed:?}"));
                    Some(elapsed)
                }
                Ok(_) => {
                    report.push("single_request", CheckStatus::Fail, "empty answer");
                    None
                }
                Err(e) => {
                    report.push("single_request", CheckStatus::Fail, format!("{}: {}", e.code, e.message));
                    None
                }
            }
        }
        Err(e) => {
            report.push("single_request", CheckStatus::Fail, e.to_string());
            None
        }
    }
}

fn check_concurrency(bridge: &Arc<Bridge>, single: Option<Duration>, report: &mut ConformanceReport) {
    if !bridge.descriptor().capabilities.concurrent {
        report.push("concurrency", CheckStatus::Skip, "backend does not claim concurrency");
        return;
    }
    let started = Instant::now();
    let handles: Vec<_> = (0..CONCURRENT_REQUESTS)
        .map(|i| {
            let b = Arc::clone(bridge);
            let id = b.next_id();
            std::thread::spawn(move || (id.clone(), b.request(&probe(id, 100 + i as u64))))
        })
        .collect();
    let mut failures = Vec::new();
    for h in handles {
        match h.join() {
            Ok((id, Ok(resp))) if resp.id == id && resp.is_well_formed() => {}
            Ok((id, Ok(resp))) => failures.push(format!("{id} answered as {}", resp.id)),
            Ok((id, Err(e))) => failures.push(format!("{id}: {e}")),
            Err(_) => failures.push("request thread panicked".into()),
        }
    }
    let elapsed = started.elapsed();
    if !failures.is_empty() {
        report.push("concurrency", CheckStatus::Fail, failures.join("; "));
        return;
    }
    match single {
        Some(one) if one >= MIN_MEASURABLE && elapsed.as_secs_f64() >= 0.75 * CONCURRENT_REQUESTS as f64 * one.as_secs_f64() => {
            report.push(
                "concurrency",
                CheckStatus::Warn,
                format!("{CONCURRENT_REQUESTS} parallel requests took {elapsed:?} against {one:?} for one; backend appears to serialize"),
            );
        }
        _ => report.push("concurrency", CheckStatus::Pass, format!("{CONCURRENT_REQUESTS} requests resolved in {elapsed:?}")),
    }
}

fn check_malformed(bridge: &Bridge, report: &mut ConformanceReport) {
    let garbage = ["{not json", r#"{"type":"generate","id":"bad"}"#, r#"{"type":"no_such_frame"}"#];
    for line in garbage {
        if let Err(e) = bridge.write_line(line) {
            report.push("malformed_input", CheckStatus::Fail, format!("write failed: {e}"));
            return;
        }
    }
    let id = bridge.next_id();
    match bridge.request(&probe(id.clone(), 7)) {
        Ok(resp) if resp.id == id && resp.answer.is_some() => {
            report.push("malformed_input", CheckStatus::Pass, "backend survived malformed frames")
        }
        Ok(resp) => report.push("malformed_input", CheckStatus::Fail, format!("bad follow-up response {resp:?}")),
        Err(e) => report.push("malformed_input", CheckStatus::Fail, format!("follow-up request failed: {e}")),
    }
}

fn check_determinism(bridge: &Bridge, report: &mut ConformanceReport) {
    let ask = |seed| {
        let id = bridge.next_id();
        bridge.request(&probe(id, seed)).map(|r| r.answer)
    };
    match (ask(42), ask(42)) {
        (Ok(Some(a)), Ok(Some(b))) if a == b => {
            report.push("determinism", CheckStatus::Pass, "same seed gave identical answers")
        }
        (Ok(Some(a)), Ok(Some(b))) => {
            report.push("determinism", CheckStatus::Fail, format!("same seed gave '{a}' then '{b}'"))
        }
        (a, b) => report.push("determinism", CheckStatus::Fail, format!("requests failed: {a:?} / {b:?}")),
    }
}
