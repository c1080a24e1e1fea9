use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use clarisim::bridge::TransportSpec;
use clarisim::corpus::{load_multi_turn, load_single_turn, LoadMode, MultiTurnConversation, QAExample};
use clarisim::decoding::NGramModel;
use clarisim::simulator::rules::TermRarity;
use clarisim::simulator::{
    run_batch, write_answer_records, AnswerBackend, AnswerRecord, BatchInput, BatchOptions, CorpusOracle,
    ExternalBackend, HistoryMode, NGramBackend, RuleBasedBackend,
};

use crate::config::Config;
use crate::output::{create, table};
use crate::{BackendArgs, BackendChoice, DecodingArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HistoryArg {
    /// Earlier turns carry the dataset's reference answers.
    Reference,
    /// Earlier turns carry the simulator's own answers.
    Simulated,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    decoding: DecodingArgs,
    /// Single-turn TSV, or a conversation record file with --multi-turn.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Read --dataset as conversation records.
    #[arg(long)]
    multi_turn: bool,
    /// History given to later turns of a conversation.
    #[arg(long, value_enum, default_value = "reference")]
    history: HistoryArg,
    /// Answer records (JSON lines); standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Store per-answer latency in the records.
    #[arg(long)]
    latency: bool,
}

/// Either kind of dataset, loaded once.
pub enum Inputs {
    Single(Vec<QAExample>),
    Multi(Vec<MultiTurnConversation>),
}

impl Inputs {
    pub fn load(path: &Path, multi_turn: bool) -> Result<Self> {
        Ok(if multi_turn {
            let l = load_multi_turn(path, LoadMode::Lenient)?;
            warn_rejected(path, l.rejected.len());
            Self::Multi(l.items)
        } else {
            let l = load_single_turn(path, LoadMode::Lenient)?;
            warn_rejected(path, l.rejected.len());
            Self::Single(l.items)
        })
    }

    pub fn examples(&self) -> &[QAExample] {
        match self {
            Self::Single(x) => x,
            Self::Multi(_) => &[],
        }
    }

    pub fn conversations(&self) -> &[MultiTurnConversation] {
        match self {
            Self::Single(_) => &[],
            Self::Multi(x) => x,
        }
    }
}

fn warn_rejected(path: &Path, n: usize) {
    if n > 0 {
        log::warn!("{}: skipped {n} invalid record(s); run `dataset validate` for details", path.display());
    }
}

fn is_conversation_file(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"))
}

fn rule_backend(cfg: &Config, inputs: &Inputs) -> RuleBasedBackend {
    let mut texts: BTreeSet<&str> = BTreeSet::new();
    for e in inputs.examples() {
        texts.insert(&e.need.facet_desc);
        texts.insert(&e.question);
    }
    for c in inputs.conversations() {
        texts.insert(&c.need.facet_desc);
        texts.extend(c.turns.iter().map(|t| t.question.as_str()));
    }
    let backend = RuleBasedBackend::new(cfg.rules.clone());
    if texts.is_empty() {
        backend
    } else {
        backend.with_rarity(TermRarity::from_texts(texts))
    }
}

fn transport(args: &BackendArgs, cfg: &Config) -> Result<(String, TransportSpec)> {
    if let Some(cmd) = &args.cmd {
        return Ok(("extern".into(), TransportSpec::Stdio { command: cmd.clone() }));
    }
    if let Some(addr) = &args.addr {
        return Ok(("extern".into(), TransportSpec::Tcp { address: addr.clone() }));
    }
    if let Some(name) = &args.backend_name {
        let spec = cfg.backends.get(name).ok_or_else(|| {
            let known: Vec<&str> = cfg.backends.keys().map(String::as_str).collect();
            anyhow!("no backend '{name}' under [backends] (known: {})", if known.is_empty() { "none".into() } else { known.join(", ") })
        })?;
        return Ok((name.clone(), spec.clone()));
    }
    if cfg.backends.len() == 1 {
        let (name, spec) = cfg.backends.iter().next().expect("one backend");
        return Ok((name.clone(), spec.clone()));
    }
    bail!("--backend extern needs --cmd, --addr or --backend-name")
}

/// Resolves `--backend` against the config and the loaded inputs.
pub fn build_backend(args: &BackendArgs, cfg: &Config, inputs: &Inputs) -> Result<Arc<dyn AnswerBackend>> {
    Ok(match args.backend {
        BackendChoice::Rule => Arc::new(rule_backend(cfg, inputs)),
        BackendChoice::Oracle => {
            let own;
            let source = match &args.oracle_data {
                Some(p) => {
                    own = Inputs::load(p, is_conversation_file(p))?;
                    &own
                }
                None => inputs,
            };
            let mut oracle = CorpusOracle::new(source.examples());
            oracle.extend_conversations(source.conversations());
            if oracle.is_empty() {
                bail!("the oracle backend has no reference answers; pass --dataset or --oracle-data");
            }
            Arc::new(oracle.with_fallback(rule_backend(cfg, source)))
        }
        BackendChoice::Ngram => {
            let path = args
                .model
                .clone()
                .or_else(|| cfg.paths.ngram_model.clone())
                .context("--backend ngram needs --model or paths.ngram_model")?;
            let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            let model = NGramModel::load(BufReader::new(file)).with_context(|| format!("loading {}", path.display()))?;
            Arc::new(NGramBackend::new(Arc::new(model), cfg.markers.clone()))
        }
        BackendChoice::Extern => {
            let (name, spec) = transport(args, cfg)?;
            Arc::new(ExternalBackend::new(name, spec, cfg.bridge_options()).with_markers(cfg.markers.clone()))
        }
    })
}

pub fn run(a: SimulateArgs, cfg: &mut Config) -> Result<()> {
    a.decoding.apply(cfg)?;
    let path = if a.multi_turn { a.dataset.clone().or(cfg.paths.multi_turn.clone()) } else { a.dataset.clone().or(cfg.paths.dataset.clone()) }
        .context("no dataset: pass --dataset or set it under [paths] in the config")?;
    let inputs = Inputs::load(&path, a.multi_turn)?;
    let backend = build_backend(&a.backend, cfg, &inputs)?;
    let opts = BatchOptions {
        history_mode: match a.history {
            HistoryArg::Reference => HistoryMode::Reference,
            HistoryArg::Simulated => HistoryMode::Simulated,
        },
        record_latency: a.latency,
        rules: cfg.rules.clone(),
    };
    let batch = match &inputs {
        Inputs::Single(x) => BatchInput::SingleTurn(x),
        Inputs::Multi(x) => BatchInput::MultiTurn(x),
    };
    let started = Instant::now();
    let records = run_batch(batch, Arc::clone(&backend), &cfg.decoding, &opts)?;
    let elapsed = started.elapsed();

    let summary = summarize(&records, backend.name(), elapsed.as_secs_f64());
    match &a.out {
        Some(out) => {
            write_answer_records(&records, create(out)?)?;
            print!("{summary}");
            println!("records written to {}", out.display());
        }
        None => {
            let stdout = io::stdout();
            write_answer_records(&records, stdout.lock())?;
            eprint!("{summary}");
        }
    }
    io::stdout().flush()?;
    let failed = records.iter().filter(|r| r.is_failure()).count();
    if failed > 0 {
        bail!("{failed} of {} answers failed", records.len());
    }
    Ok(())
}

fn summarize(records: &[AnswerRecord], backend: &str, secs: f64) -> String {
    let mut by_case: BTreeMap<&str, usize> = BTreeMap::new();
    let mut by_flag: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *by_case.entry(r.case.as_str()).or_default() += 1;
        for f in &r.flags {
            *by_flag.entry(f).or_default() += 1;
        }
    }
    let mut rows: Vec<Vec<String>> = by_case.iter().map(|(c, n)| vec![format!("case: {c}"), n.to_string()]).collect();
    rows.extend(by_flag.iter().map(|(f, n)| vec![format!("flag: {f}"), n.to_string()]));
    let failed = records.iter().filter(|r| r.is_failure()).count();
    let mut out = table(&["answers", "count"], &rows);
    out.push_str(&format!(
        "{backend}: {} answers, {failed} failures in {secs:.2}s\n",
        records.len()
    ));
    out
}
