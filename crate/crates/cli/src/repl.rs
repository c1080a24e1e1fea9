use std::io::{self, BufRead, IsTerminal, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use clarisim::conversation::Role;
use clarisim::corpus::InformationNeed;
use clarisim::simulator::{open_session, RuleBasedBackend, Session};

use crate::config::Config;
use crate::simulate::{build_backend, Inputs};
use crate::{BackendArgs, DecodingArgs};

const HELP: &str = "\
type a clarifying question to get the simulated answer
  :history      show the conversation so far
  :reset        drop every turn after the initial query
  :case <q>     show how the rules classify <q> without asking it
  :help         this text
  :quit         leave";

#[derive(Debug, Args)]
pub struct ReplArgs {
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    decoding: DecodingArgs,
    /// Dataset holding the need selected with --need-id.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Read --dataset as conversation records.
    #[arg(long)]
    multi_turn: bool,
    /// `topic-facet` or `topic/facet` of a need in --dataset.
    #[arg(long, conflicts_with = "need_text", required_unless_present = "need_text")]
    need_id: Option<String>,
    /// Facet description of an ad-hoc need.
    #[arg(long)]
    need_text: Option<String>,
    /// Initial query of an ad-hoc need (default: the need text).
    #[arg(long, requires = "need_text")]
    query: Option<String>,
}

fn find_need(inputs: &Inputs, id: &str) -> Option<InformationNeed> {
    let needs = inputs.examples().iter().map(|e| &e.need).chain(inputs.conversations().iter().map(|c| &c.need));
    needs
        .into_iter()
        .find(|n| {
            let k = n.key();
            k.qid() == id || k.to_string() == id
        })
        .cloned()
}

pub fn run(a: ReplArgs, cfg: &mut Config) -> Result<()> {
    a.decoding.apply(cfg)?;
    let dataset = if a.multi_turn { a.dataset.clone().or(cfg.paths.multi_turn.clone()) } else { a.dataset.clone().or(cfg.paths.dataset.clone()) };
    let inputs = match &dataset {
        Some(p) => Inputs::load(p, a.multi_turn)?,
        None => Inputs::Single(Vec::new()),
    };
    let need = match (&a.need_id, &a.need_text) {
        (Some(id), _) => {
            if dataset.is_none() {
                bail!("--need-id needs --dataset (or paths.dataset in the config)");
            }
            find_need(&inputs, id).with_context(|| format!("unknown need id '{id}'"))?
        }
        (None, Some(text)) => InformationNeed::new("repl", "1", a.query.as_deref().unwrap_or(text), text)?,
        (None, None) => bail!("pass --need-id or --need-text"),
    };
    let backend = build_backend(&a.backend, cfg, &inputs)?;
    let rules = RuleBasedBackend::new(cfg.rules.clone());
    let mut session = open_session(need, backend, cfg.decoding)?;

    let stdin = io::stdin();
    let interactive = stdin.is_terminal();
    let mut out = io::stdout().lock();
    if interactive {
        writeln!(out, "need {}: {}", session.need().key(), session.need().facet_desc)?;
        writeln!(out, "initial query: {}", session.need().query)?;
        writeln!(out, "{HELP}")?;
    }
    let mut lines = stdin.lock().lines();
    loop {
        if interactive {
            write!(out, "system> ")?;
            out.flush()?;
        }
        let Some(line) = lines.next() else { break };
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once(char::is_whitespace).map_or((line, ""), |(c, r)| (c, r.trim())) {
            (":quit" | ":q" | ":exit", _) => break,
            (":help", _) => writeln!(out, "{HELP}")?,
            (":history", _) => print_history(&mut out, &session)?,
            (":reset", _) => {
                session.reset();
                writeln!(out, "history reset to the initial query")?;
            }
            (":case", "") => writeln!(out, "usage: :case <question>")?,
            (":case", q) => {
                let case = rules.classify(session.need(), session.history(), q);
                writeln!(out, "{}", case.as_str())?;
            }
            (cmd, _) if cmd.starts_with(':') => writeln!(out, "unknown command {cmd}; try :help")?,
            _ => match session.answer_detailed(line) {
                Ok(a) if a.flags.is_empty() => writeln!(out, "user> {}", a.text)?,
                Ok(a) => writeln!(out, "user> {}  [{}]", a.text, a.flags.join(", "))?,
                Err(e) => writeln!(out, "error: {e}")?,
            },
        }
        out.flush()?;
    }
    Ok(())
}

fn print_history(out: &mut impl Write, session: &Session) -> io::Result<()> {
    for t in &session.history().turns {
        let who = match t.role {
            Role::User => "user",
            Role::System => "system",
        };
        writeln!(out, "{who}: {}", t.text)?;
    }
    Ok(())
}
