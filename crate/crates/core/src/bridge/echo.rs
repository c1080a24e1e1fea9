//! Reference backend that answers with a deterministic function of each
//! request. Knobs reproduce common protocol faults for testing.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::protocol::{codes, Capabilities, Frame, GenerateRequest, GenerateResponse, Hello, PROTOCOL_VERSION};
use crate::decoding::derive_seed;
use crate::text::normalize_key;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EchoOptions {
    pub name: String,
    /// Version announced in `hello`.
    pub protocol_version: u32,
    /// Concurrency announced in `hello`.
    pub claim_concurrent: bool,
    /// Whether requests are really served in parallel.
    pub parallel: bool,
    pub delay: Duration,
    /// Replace the request seed with a per-process counter.
    pub ignore_seed: bool,
    /// Never write anything.
    pub silent: bool,
    /// Answer with a mangled request id.
    pub wrong_id: bool,
    pub logprobs: bool,
}

impl Default for EchoOptions {
    fn default() -> Self {
        Self {
            name: "echo".into(),
            protocol_version: PROTOCOL_VERSION,
            claim_concurrent: true,
            parallel: true,
            delay: Duration::ZERO,
            ignore_seed: false,
            silent: false,
            wrong_id: false,
            logprobs: false,
        }
    }
}

fn fnv1a(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in p.bytes().chain(std::iter::once(0x1f)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// `echo: <normalized question> [<16 hex digits>]`, where the digits mix the
/// seed with every text field of the request.
pub fn echo_answer(req: &GenerateRequest) -> String {
    let mut parts: Vec<&str> = vec![&req.need, &req.query, &req.question];
    parts.extend(req.history.iter().map(|t| t.text.as_str()));
    let digest = derive_seed(req.params.seed, fnv1a(&parts));
    format!("echo: {} [{digest:016x}]", normalize_key(&req.question))
}

static NONCE: AtomicU64 = AtomicU64::new(0);

fn respond(req: &GenerateRequest, opts: &EchoOptions) -> GenerateResponse {
    let mut req = req.clone();
    if opts.ignore_seed {
        req.params.seed = NONCE.fetch_add(1, Ordering::Relaxed);
    }
    let answer = echo_answer(&req);
    let id = if opts.wrong_id { format!("{}-x", req.id) } else { req.id.clone() };
    let mut resp = GenerateResponse::ok(id, answer.clone());
    if opts.logprobs {
        resp.token_logprobs = Some(answer.split_whitespace().map(|t| (t.to_string(), -1.0)).collect());
    }
    resp
}

fn send<W: Write>(out: &Mutex<W>, frame: &Frame) -> std::io::Result<()> {
    let mut w = out.lock().expect("echo writer lock");
    w.write_all(frame.encode().as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()
}

/// Serves one connection until `shutdown` or end of input.
pub fn serve_echo<R, W>(input: R, output: W, opts: &EchoOptions) -> std::io::Result<()>
where
    R: BufRead,
    W: Write + Send + 'static,
{
    let out = Arc::new(Mutex::new(output));
    let mut workers = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() || opts.silent {
            continue;
        }
        match Frame::decode(&line) {
            Ok(Frame::Hello(_)) => {
                send(
                    &out,
                    &Frame::Hello(Hello {
                        protocol_version: opts.protocol_version,
                        name: opts.name.clone(),
                        capabilities: Capabilities {
                            concurrent: opts.claim_concurrent,
                            logprobs: opts.logprobs,
                            marked_sequence: false,
                        },
                    }),
                )?;
            }
            Ok(Frame::Generate(req)) if opts.parallel => {
                let out = Arc::clone(&out);
                let opts = opts.clone();
                workers.push(std::thread::spawn(move || {
                    std::thread::sleep(opts.delay);
                    let _ = send(&out, &Frame::Response(respond(&req, &opts)));
                }));
            }
            Ok(Frame::Generate(req)) => {
                std::thread::sleep(opts.delay);
                send(&out, &Frame::Response(respond(&req, opts)))?;
            }
            Ok(Frame::Shutdown) => break,
            Ok(Frame::Response(_)) => {
                send(&out, &Frame::Response(GenerateResponse::err("", codes::UNEXPECTED_FRAME, "backends do not accept responses")))?;
            }
            Err(e) => {
                send(&out, &Frame::Response(GenerateResponse::err("", codes::MALFORMED_FRAME, e.to_string())))?;
            }
        }
    }
    for w in workers {
        let _ = w.join();
    }
    Ok(())
}

/// Accepts connections forever, one thread each.
pub fn serve_echo_tcp(listener: TcpListener, opts: EchoOptions) -> std::io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let _ = stream.set_nodelay(true);
        let opts = opts.clone();
        std::thread::spawn(move || {
            let Ok(read) = stream.try_clone() else { return };
            if let Err(e) = serve_echo(BufReader::new(read), stream, &opts) {
                log::debug!("echo connection ended: {e}");
            }
        });
    }
    Ok(())
}
