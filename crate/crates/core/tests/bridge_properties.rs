use std::net::TcpListener;
use std::sync::Arc;
use std::time::Duration;

use clarisim::bridge::protocol::GenerateRequest;
use clarisim::bridge::{echo_answer, serve_echo_tcp, Bridge, BridgeError, BridgeOptions, EchoOptions, TransportSpec};
use clarisim::corpus::InformationNeed;
use clarisim::decoding::DecodingParams;
use clarisim::simulator::{open_session, AnswerBackend, ExternalBackend};

fn spawn_echo(opts: EchoOptions) -> TransportSpec {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let address = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || serve_echo_tcp(listener, opts));
    TransportSpec::Tcp { address }
}

fn request(id: String, question: String, seed: u64) -> GenerateRequest {
    GenerateRequest {
        id,
        need: "cheap flights to paris in june".into(),
        query: "flights paris".into(),
        history: vec![],
        question,
        params: DecodingParams { seed, ..DecodingParams::default() },
        marked_sequence: None,
    }
}

#[test]
fn every_concurrent_request_gets_its_own_response() {
    let opts = EchoOptions { delay: Duration::from_millis(3), ..EchoOptions::default() };
    let bridge = Arc::new(Bridge::connect(&spawn_echo(opts), BridgeOptions::default()).unwrap());
    let handles: Vec<_> = (0..8)
        .map(|t| {
            let b = Arc::clone(&bridge);
            std::thread::spawn(move || {
                (0..10)
                    .map(|i| {
                        let req = request(b.next_id(), format!("thread {t} question {i}?"), t * 100 + i);
                        (req.clone(), b.request(&req))
                    })
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    let mut ids = std::collections::BTreeSet::new();
    for h in handles {
        for (req, resp) in h.join().unwrap() {
            let resp = resp.unwrap();
            assert_eq!(resp.id, req.id);
            assert_eq!(resp.answer.as_deref(), Some(echo_answer(&req).as_str()));
            assert!(ids.insert(req.id));
        }
    }
    assert_eq!(ids.len(), 80);
}

#[test]
fn slow_backend_yields_exactly_one_timeout_per_request() {
    let opts = EchoOptions { delay: Duration::from_millis(300), ..EchoOptions::default() };
    let bridge = Bridge::connect(
        &spawn_echo(opts),
        BridgeOptions { hello_timeout: Duration::from_secs(2), request_timeout: Duration::from_millis(50) },
    )
    .unwrap();
    for i in 0..3 {
        let req = request(format!("slow{i}"), "anything?".into(), i);
        assert!(matches!(bridge.request(&req), Err(BridgeError::Timeout { .. })));
    }
    // Late replies to the expired ids are dropped without failing the bridge.
    std::thread::sleep(Duration::from_millis(400));
    assert!(bridge.notices().is_empty());
    let again = request("slow-after".into(), "anything?".into(), 7);
    assert!(matches!(bridge.request(&again), Err(BridgeError::Timeout { .. })));
}

#[test]
fn session_turns_arrive_in_order() {
    let backend: Arc<dyn AnswerBackend> =
        Arc::new(ExternalBackend::new("echo", spawn_echo(EchoOptions::default()), BridgeOptions::default()));
    let need = InformationNeed::new("2", "F1", "flights paris", "cheap flights to paris in june").unwrap();
    let mut s = open_session(need, backend, DecodingParams::default()).unwrap();
    let questions: Vec<String> = (0..6).map(|i| format!("Question number {i}?")).collect();
    for q in &questions {
        let a = s.answer(q).unwrap();
        assert!(a.starts_with(&format!("echo: {}", clarisim::text::normalize_key(q))), "{a}");
    }
    let asked: Vec<&str> = s.history().system_questions().collect();
    assert_eq!(asked, questions.iter().map(String::as_str).collect::<Vec<_>>());
}
