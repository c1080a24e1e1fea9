//! Client side of the external-backend protocol over a subprocess's standard
//! streams or a TCP socket.
//!
//! One reader thread owns the incoming half of the transport and routes each
//! `response` to the caller waiting on its id. Writes are serialized through
//! a mutex, so requests from one caller go out in call order.

mod conformance;
mod echo;
pub mod protocol;

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use conformance::{conformance_suite, CheckResult, CheckStatus, ConformanceReport};
pub use echo::{echo_answer, serve_echo, serve_echo_tcp, EchoOptions};
pub use protocol::{
    Capabilities, ErrorInfo, Frame, GenerateRequest, GenerateResponse, Hello, HistoryTurn, PROTOCOL_VERSION,
};

pub const DEFAULT_HELLO_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("i/o error on backend transport: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid backend command '{0}'")]
    InvalidCommand(String),
    #[error("failed to launch backend '{command}': {source}")]
    Spawn { command: String, source: std::io::Error },
    #[error("no hello from backend within {0:?}")]
    HelloTimeout(Duration),
    #[error("protocol version mismatch: expected {expected}, backend speaks {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("request {id} timed out after {after:?}")]
    Timeout { id: String, after: Duration },
    #[error("malformed frame from backend: {0}")]
    Malformed(String),
    #[error("unexpected frame from backend: {0}")]
    UnexpectedFrame(String),
    #[error("backend answered unknown request id '{0}'")]
    UnknownId(String),
    #[error("request id '{0}' is already in flight")]
    DuplicateId(String),
    #[error("backend closed the connection")]
    Disconnected,
}

/// Where the backend lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransportSpec {
    /// Launch a subprocess and talk over its stdin/stdout.
    Stdio { command: String },
    /// Connect to `host:port`.
    Tcp { address: String },
}

impl std::fmt::Display for TransportSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Stdio { command } => write!(f, "stdio:{command}"),
            Self::Tcp { address } => write!(f, "tcp:{address}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BridgeOptions {
    pub hello_timeout: Duration,
    pub request_timeout: Duration,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self { hello_timeout: DEFAULT_HELLO_TIMEOUT, request_timeout: DEFAULT_REQUEST_TIMEOUT }
    }
}

/// What the backend announced in its `hello`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendDescriptor {
    pub name: String,
    pub protocol_version: u32,
    pub capabilities: Capabilities,
}

type Reply = Result<GenerateResponse, BridgeError>;

#[derive(Default)]
struct Routing {
    pending: HashMap<String, Sender<Reply>>,
    expired: HashSet<String>,
    hello: Option<Sender<Hello>>,
    notices: Vec<String>,
}

struct Shared {
    routing: Mutex<Routing>,
    closed: AtomicBool,
}

impl Shared {
    fn fail_all(&self, make: impl Fn() -> BridgeError) {
        let mut r = self.routing.lock().expect("routing lock");
        for (_, tx) in r.pending.drain() {
            let _ = tx.send(Err(make()));
        }
    }
}

pub struct Bridge {
    descriptor: BackendDescriptor,
    writer: Mutex<Box<dyn Write + Send>>,
    shared: Arc<Shared>,
    reader: Option<JoinHandle<()>>,
    child: Option<Child>,
    socket: Option<TcpStream>,
    next_id: AtomicU64,
    options: BridgeOptions,
    label: String,
}

impl std::fmt::Debug for Bridge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bridge").field("label", &self.label).field("descriptor", &self.descriptor).finish()
    }
}

impl Bridge {
    pub fn connect(spec: &TransportSpec, options: BridgeOptions) -> Result<Self, BridgeError> {
        match spec {
            TransportSpec::Stdio { command } => {
                let argv = shell_words::split(command).map_err(|_| BridgeError::InvalidCommand(command.clone()))?;
                let (program, args) = argv.split_first().ok_or_else(|| BridgeError::InvalidCommand(command.clone()))?;
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|source| BridgeError::Spawn { command: command.clone(), source })?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let mut bridge = Self::handshake(BufReader::new(stdout), Box::new(stdin), options, spec.to_string());
                match &mut bridge {
                    Ok(b) => b.child = Some(child),
                    Err(_) => {
                        let _ = child.kill();
                        let _ = child.wait();
                    }
                }
                bridge
            }
            TransportSpec::Tcp { address } => {
                let stream = TcpStream::connect(address)?;
                stream.set_nodelay(true)?;
                let read = stream.try_clone()?;
                let socket = stream.try_clone()?;
                Self::handshake_inner(BufReader::new(read), Box::new(stream), options, spec.to_string(), Some(socket))
            }
        }
    }

    /// Runs the handshake over an already-open pair of streams.
    pub fn handshake<R>(
        reader: R,
        writer: Box<dyn Write + Send>,
        options: BridgeOptions,
        label: String,
    ) -> Result<Self, BridgeError>
    where
        R: BufRead + Send + 'static,
    {
        Self::handshake_inner(reader, writer, options, label, None)
    }

    fn handshake_inner<R>(
        reader: R,
        writer: Box<dyn Write + Send>,
        options: BridgeOptions,
        label: String,
        socket: Option<TcpStream>,
    ) -> Result<Self, BridgeError>
    where
        R: BufRead + Send + 'static,
    {
        let shared = Arc::new(Shared { routing: Mutex::new(Routing::default()), closed: AtomicBool::new(false) });
        let (hello_tx, hello_rx) = mpsc::channel();
        shared.routing.lock().expect("routing lock").hello = Some(hello_tx);
        let reader = {
            let shared = Arc::clone(&shared);
            std::thread::Builder::new()
                .name("clarisim-bridge-reader".into())
                .spawn(move || read_loop(reader, shared))?
        };
        let mut bridge = Self {
            descriptor: BackendDescriptor { name: String::new(), protocol_version: 0, capabilities: Capabilities::default() },
            writer: Mutex::new(writer),
            shared,
            reader: Some(reader),
            child: None,
            socket,
            next_id: AtomicU64::new(1),
            options,
            label,
        };
        bridge.write_frame(&Frame::Hello(Hello {
            protocol_version: PROTOCOL_VERSION,
            name: "clarisim".into(),
            capabilities: Capabilities::default(),
        }))?;
        let hello = wait_hello(&hello_rx, options.hello_timeout, &bridge.shared)?;
        if hello.protocol_version != PROTOCOL_VERSION {
            return Err(BridgeError::VersionMismatch { expected: PROTOCOL_VERSION, found: hello.protocol_version });
        }
        bridge.descriptor = BackendDescriptor {
            name: hello.name,
            protocol_version: hello.protocol_version,
            capabilities: hello.capabilities,
        };
        Ok(bridge)
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn options(&self) -> BridgeOptions {
        self.options
    }

    pub fn next_id(&self) -> String {
        format!("r{}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    /// Frame-level notices (responses without an id) seen so far.
    pub fn notices(&self) -> Vec<String> {
        self.shared.routing.lock().expect("routing lock").notices.clone()
    }

    fn write_frame(&self, frame: &Frame) -> Result<(), BridgeError> {
        self.write_line(&frame.encode())
    }

    /// Sends one raw line; used to probe malformed-input handling.
    pub fn write_line(&self, line: &str) -> Result<(), BridgeError> {
        let mut w = self.writer.lock().expect("writer lock");
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    /// Sends a request and blocks until its response or the request timeout.
    /// A backend-reported error comes back as an `Ok` response carrying that
    /// error.
    pub fn request(&self, req: &GenerateRequest) -> Result<GenerateResponse, BridgeError> {
        let rx = self.submit(req)?;
        self.wait(&req.id, rx)
    }

    fn submit(&self, req: &GenerateRequest) -> Result<Receiver<Reply>, BridgeError> {
        if self.shared.closed.load(Ordering::SeqCst) {
            return Err(BridgeError::Disconnected);
        }
        let (tx, rx) = mpsc::channel();
        {
            let mut r = self.shared.routing.lock().expect("routing lock");
            if r.pending.contains_key(&req.id) {
                return Err(BridgeError::DuplicateId(req.id.clone()));
            }
            r.expired.remove(&req.id);
            r.pending.insert(req.id.clone(), tx);
        }
        if let Err(e) = self.write_frame(&Frame::Generate(req.clone())) {
            self.shared.routing.lock().expect("routing lock").pending.remove(&req.id);
            return Err(e);
        }
        Ok(rx)
    }

    fn wait(&self, id: &str, rx: Receiver<Reply>) -> Reply {
        match rx.recv_timeout(self.options.request_timeout) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => {
                let mut r = self.shared.routing.lock().expect("routing lock");
                r.pending.remove(id);
                r.expired.insert(id.to_string());
                drop(r);
                // A response may have raced the timeout.
                match rx.try_recv() {
                    Ok(reply) => reply,
                    Err(_) => Err(BridgeError::Timeout { id: id.to_string(), after: self.options.request_timeout }),
                }
            }
            Err(RecvTimeoutError::Disconnected) => Err(BridgeError::Disconnected),
        }
    }

    /// Sends `shutdown` and waits up to `grace` for a subprocess to exit,
    /// killing it otherwise. Returns whether it exited on its own.
    pub fn shutdown(mut self, grace: Duration) -> bool {
        self.close(grace)
    }

    fn close(&mut self, grace: Duration) -> bool {
        let _ = self.write_frame(&Frame::Shutdown);
        let mut exited = true;
        if let Some(mut child) = self.child.take() {
            drop(std::mem::replace(&mut *self.writer.lock().expect("writer lock"), Box::new(std::io::sink())));
            let deadline = std::time::Instant::now() + grace;
            exited = loop {
                match child.try_wait() {
                    Ok(Some(_)) => break true,
                    Ok(None) if std::time::Instant::now() < deadline => std::thread::sleep(Duration::from_millis(10)),
                    _ => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break false;
                    }
                }
            };
            if let Some(h) = self.reader.take() {
                let _ = h.join();
            }
        }
        if let Some(socket) = self.socket.take() {
            let _ = socket.shutdown(std::net::Shutdown::Both);
        }
        self.shared.closed.store(true, Ordering::SeqCst);
        exited
    }
}

impl Drop for Bridge {
    fn drop(&mut self) {
        if !self.shared.closed.load(Ordering::SeqCst) {
            self.close(Duration::from_secs(2));
        }
    }
}

fn wait_hello(rx: &Receiver<Hello>, timeout: Duration, shared: &Shared) -> Result<Hello, BridgeError> {
    match rx.recv_timeout(timeout) {
        Ok(h) => Ok(h),
        Err(RecvTimeoutError::Timeout) => Err(BridgeError::HelloTimeout(timeout)),
        Err(RecvTimeoutError::Disconnected) if shared.closed.load(Ordering::SeqCst) => Err(BridgeError::Disconnected),
        Err(RecvTimeoutError::Disconnected) => Err(BridgeError::UnexpectedFrame("first frame was not hello".into())),
    }
}

fn read_loop<R: BufRead>(mut reader: R, shared: Arc<Shared>) {
    let mut line = String::new();
    loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        if line.trim().is_empty() {
            continue;
        }
        let frame = match Frame::decode(&line) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("malformed frame from backend: {e}");
                let msg = format!("{e}: {}", line.trim_end());
                shared.fail_all(|| BridgeError::Malformed(msg.clone()));
                continue;
            }
        };
        let mut r = shared.routing.lock().expect("routing lock");
        match frame {
            Frame::Hello(h) => match r.hello.take() {
                Some(tx) => {
                    let _ = tx.send(h);
                }
                None => log::warn!("ignoring repeated hello from backend"),
            },
            Frame::Response(resp) if resp.id.is_empty() => {
                let note = resp.error.map(|e| format!("{}: {}", e.code, e.message)).unwrap_or_default();
                log::warn!("backend notice: {note}");
                r.notices.push(note);
            }
            Frame::Response(resp) => {
                if let Some(tx) = r.pending.remove(&resp.id) {
                    let reply = if resp.is_well_formed() {
                        Ok(resp)
                    } else {
                        Err(BridgeError::Malformed(format!("response {} must carry exactly one of answer/error", resp.id)))
                    };
                    let _ = tx.send(reply);
                } else if r.expired.remove(&resp.id) {
                    log::warn!("dropping late response for timed-out request {}", resp.id);
                } else {
                    log::warn!("backend answered unknown id {}", resp.id);
                    let id = resp.id.clone();
                    for (_, tx) in r.pending.drain() {
                        let _ = tx.send(Err(BridgeError::UnknownId(id.clone())));
                    }
                }
            }
            other => {
                let name = match other {
                    Frame::Generate(_) => "generate",
                    Frame::Shutdown => "shutdown",
                    _ => "unknown",
                };
                log::warn!("unexpected {name} frame from backend");
                // A backend that never says hello fails the handshake at once.
                r.hello.take();
            }
        }
    }
    shared.closed.store(true, Ordering::SeqCst);
    let mut r = shared.routing.lock().expect("routing lock");
    r.hello.take();
    for (_, tx) in r.pending.drain() {
        let _ = tx.send(Err(BridgeError::Disconnected));
    }
}

/// Builds the wire request for one simulator turn.
pub fn build_request(
    id: String,
    need: &crate::corpus::InformationNeed,
    history: &crate::conversation::ConversationHistory,
    question: &str,
    params: &crate::decoding::DecodingParams,
    marked_sequence: Option<String>,
) -> GenerateRequest {
    GenerateRequest {
        id,
        need: need.facet_desc.clone(),
        query: need.query.clone(),
        history: history
            .turns
            .iter()
            .skip(1)
            .map(|t| HistoryTurn { role: t.role, text: t.text.clone() })
            .collect(),
        question: question.to_string(),
        params: *params,
        marked_sequence,
    }
}
