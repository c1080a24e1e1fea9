use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use clarisim::bridge::{conformance_suite, serve_echo, serve_echo_tcp, CheckStatus, EchoOptions, TransportSpec};

use crate::config::Config;
use crate::output::{table, write_json};
use crate::ValidationFailed;

#[derive(Debug, Subcommand)]
pub enum BackendCommand {
    /// Deterministic reference backend speaking the protocol.
    Echo(EchoArgs),
    /// Run the conformance suite against a backend.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct EchoArgs {
    /// Serve TCP connections on HOST:PORT instead of standard input/output.
    #[arg(long, value_name = "HOST:PORT")]
    listen: Option<String>,
    /// Name announced in hello.
    #[arg(long, default_value = "echo")]
    name: String,
    /// Delay before every response.
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
    /// Serve one request at a time and announce concurrent=false.
    #[arg(long)]
    sequential: bool,
    /// Replace the request seed with a counter (breaks determinism).
    #[arg(long)]
    ignore_seed: bool,
    /// Announce this protocol version in hello.
    #[arg(long)]
    protocol_version: Option<u32>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Launch command (stdio transport).
    #[arg(long, conflicts_with_all = ["addr", "backend_name"])]
    cmd: Option<String>,
    /// HOST:PORT (TCP transport).
    #[arg(long, conflicts_with = "backend_name")]
    addr: Option<String>,
    /// Backend declared under [backends.<name>].
    #[arg(long)]
    backend_name: Option<String>,
    /// Conformance report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cmd: BackendCommand, cfg: &Config) -> Result<()> {
    match cmd {
        BackendCommand::Echo(a) => echo(a),
        BackendCommand::Check(a) => check(a, cfg),
    }
}

fn echo(a: EchoArgs) -> Result<()> {
    let mut opts = EchoOptions {
        name: a.name,
        delay: Duration::from_millis(a.delay_ms),
        ignore_seed: a.ignore_seed,
        claim_concurrent: !a.sequential,
        parallel: !a.sequential,
        ..EchoOptions::default()
    };
    if let Some(v) = a.protocol_version {
        opts.protocol_version = v;
    }
    match a.listen {
        Some(addr) => {
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("echo backend listening on {}", listener.local_addr()?);
            serve_echo_tcp(listener, opts)?;
        }
        None => serve_echo(BufReader::new(io::stdin()), io::stdout(), &opts)?,
    }
    Ok(())
}

fn check(a: CheckArgs, cfg: &Config) -> Result<()> {
    let spec = match (a.cmd, a.addr, a.backend_name) {
        (Some(command), _, _) => TransportSpec::Stdio { command },
        (_, Some(address), _) => TransportSpec::Tcp { address },
        (_, _, Some(name)) => cfg.backends.get(&name).cloned().with_context(|| format!("no backend '{name}' under [backends]"))?,
        (None, None, None) => bail!("pass --cmd, --addr or --backend-name"),
    };
    let report = conformance_suite(&spec, cfg.bridge_options());
    let rows: Vec<Vec<String>> = report
        .checks
        .iter()
        .map(|c| {
            let status = match c.status {
                CheckStatus::Pass => "pass",
                CheckStatus::Warn => "warn",
                CheckStatus::Fail => "FAIL",
                CheckStatus::Skip => "skip",
            };
            vec![c.name.clone(), status.into(), c.detail.clone()]
        })
        .collect();
    println!("backend {}: {}", report.backend.as_deref().unwrap_or("(no hello)"), spec);
    print!("{}", table(&["check", "status", "detail"], &rows));
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    let failed = report.checks.iter().filter(|c| c.status == CheckStatus::Fail).count();
    if failed > 0 {
        return Err(ValidationFailed(failed).into());
    }
    Ok(())
}
