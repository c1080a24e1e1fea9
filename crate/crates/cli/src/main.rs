mod backend;
mod config;
mod dataset;
mod eval;
mod ngram;
mod output;
mod repl;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::Config;

/// Simulated searcher for evaluating clarifying questions in conversational
/// search.
#[derive(Debug, Parser)]
#[command(name = "clarisim", version, propagate_version = true)]
struct Cli {
    /// TOML config file; defaults to $CLARISIM_CONFIG when set.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate, summarize and derive training files from datasets.
    #[command(subcommand)]
    Dataset(dataset::DatasetCommand),
    /// Answer every question of a dataset with a simulator backend.
    Simulate(simulate::SimulateArgs),
    /// Ask questions interactively on behalf of one information need.
    Repl(repl::ReplArgs),
    /// Score answers, run retrieval experiments and significance tests.
    #[command(subcommand)]
    Eval(eval::EvalCommand),
    /// Reference protocol backend and conformance checks.
    #[command(subcommand)]
    Backend(backend::BackendCommand),
    /// Train the n-gram answer model.
    #[command(subcommand)]
    Ngram(ngram::NgramCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    /// Keyword rules over the facet description.
    Rule,
    /// Reference answers looked up in a dataset.
    Oracle,
    /// Smoothed n-gram language model.
    Ngram,
    /// Protocol backend over stdio or TCP.
    Extern,
}

/// Backend selection shared by `simulate` and `repl`.
#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// Answer backend.
    #[arg(long, value_enum, default_value = "rule")]
    backend: BackendChoice,
    /// Launch command of an external backend (stdio transport).
    #[arg(long, value_name = "COMMAND", conflicts_with_all = ["addr", "backend_name"])]
    cmd: Option<String>,
    /// Address of an external backend (TCP transport).
    #[arg(long, value_name = "HOST:PORT", conflicts_with = "backend_name")]
    addr: Option<String>,
    /// External backend declared under [backends.<name>] in the config.
    #[arg(long, value_name = "NAME")]
    backend_name: Option<String>,
    /// Saved n-gram model for --backend ngram.
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
    /// Reference answers for --backend oracle (default: the input dataset).
    #[arg(long, value_name = "PATH")]
    oracle_data: Option<PathBuf>,
}

/// Decoding overrides shared by commands that generate answers.
#[derive(Debug, Clone, Args)]
pub struct DecodingArgs {
    /// Base seed; every item and turn derives its own seed from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Softmax temperature (> 0).
    #[arg(long)]
    temperature: Option<f64>,
    /// Keep the k most likely tokens; 0 disables top-k filtering.
    #[arg(long)]
    top_k: Option<usize>,
    /// Nucleus mass in (0, 1].
    #[arg(long)]
    top_p: Option<f64>,
    /// Answer length limit in tokens.
    #[arg(long)]
    max_tokens: Option<usize>,
}

impl DecodingArgs {
    pub fn apply(&self, cfg: &mut Config) -> anyhow::Result<()> {
        let d = &mut cfg.decoding;
        d.seed = self.seed.unwrap_or(d.seed);
        d.temperature = self.temperature.unwrap_or(d.temperature);
        d.top_k = self.top_k.unwrap_or(d.top_k);
        d.top_p = self.top_p.unwrap_or(d.top_p);
        d.max_tokens = self.max_tokens.unwrap_or(d.max_tokens);
        d.validate()?;
        Ok(())
    }
}

/// Exit status 2: the command ran but found validation failures.
#[derive(Debug)]
pub struct ValidationFailed(pub usize);

impl std::fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} validation failure(s)", self.0)
    }
}

impl std::error::Error for ValidationFailed {}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Dataset(c) => dataset::run(c, &cfg),
        Command::Simulate(a) => simulate::run(a, &mut cfg),
        Command::Repl(a) => repl::run(a, &mut cfg),
        Command::Eval(c) => eval::run(c, &cfg),
        Command::Backend(c) => backend::run(c, &cfg),
        Command::Ngram(c) => ngram::run(c, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<ValidationFailed>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
