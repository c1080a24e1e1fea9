use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use clarisim::corpus::{load_multi_turn, load_single_turn, LoadMode};
use clarisim::decoding::DEFAULT_ALPHA;
use clarisim::simulator::NGramBackend;

use crate::config::Config;
use crate::output::create;

#[derive(Debug, Subcommand)]
pub enum NgramCommand {
    /// Fit the model on encoded single-turn rows and conversation turns.
    Train(TrainArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Single-turn TSV.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Conversation records.
    #[arg(long)]
    multi_turn_data: Option<PathBuf>,
    /// Tokens per n-gram, context included.
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Additive smoothing constant.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Model file (defaults to paths.ngram_model).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cmd: NgramCommand, cfg: &Config) -> Result<()> {
    match cmd {
        NgramCommand::Train(a) => train(a, cfg),
    }
}

fn train(a: TrainArgs, cfg: &Config) -> Result<()> {
    let single = a.dataset.or(cfg.paths.dataset.clone());
    let multi = a.multi_turn_data.or(cfg.paths.multi_turn.clone());
    if single.is_none() && multi.is_none() {
        bail!("pass --dataset and/or --multi-turn-data");
    }
    let out = a.out.or(cfg.paths.ngram_model.clone()).context("pass --out or set paths.ngram_model")?;
    let examples = match &single {
        Some(p) => load_single_turn(p, LoadMode::Lenient)?.items,
        None => Vec::new(),
    };
    let convs = match &multi {
        Some(p) => load_multi_turn(p, LoadMode::Lenient)?.items,
        None => Vec::new(),
    };
    let backend = NGramBackend::train(&examples, &convs, a.order, a.alpha, cfg.markers.clone())?;
    let mut w = create(&out)?;
    backend.model().save(&mut w)?;
    w.flush()?;
    println!(
        "trained order-{} model on {} rows and {} conversations ({} vocabulary entries) -> {}",
        a.order,
        examples.len(),
        convs.len(),
        backend.model().vocab().len(),
        out.display()
    );
    Ok(())
}
