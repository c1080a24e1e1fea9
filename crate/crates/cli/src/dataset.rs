use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Subcommand};
use clarisim::corpus::{
    build_distractor_records, compute_multi_turn_stats, compute_stats, load_multi_turn, load_single_turn, LoadMode,
    Rejection,
};

use crate::config::Config;
use crate::output::{create, table, write_json, write_jsonl};
use crate::ValidationFailed;

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Report records that violate the dataset invariants.
    Validate(InputArgs),
    /// Count topics, facets, questions and rows (or conversations and cases).
    Stats(StatsArgs),
    /// Write the double-head training file with one sampled distractor per row.
    Distractors(DistractorArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Single-turn TSV, or a conversation record file with --multi-turn.
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// Read --input as conversation records.
    #[arg(long)]
    multi_turn: bool,
    /// Exit with status 2 when any record is rejected.
    #[arg(long)]
    strict: bool,
    /// Write rejections as JSON lines.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Single-turn TSV, or a conversation record file with --multi-turn.
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// Read --input as conversation records.
    #[arg(long)]
    multi_turn: bool,
    /// Write the counts as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistractorArgs {
    /// Single-turn TSV.
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// Seed of the distractor sampler.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON-lines training file.
    #[arg(long)]
    out: PathBuf,
}

fn input_path(explicit: Option<PathBuf>, multi_turn: bool, cfg: &Config) -> Result<PathBuf> {
    let fallback = if multi_turn { cfg.paths.multi_turn.clone() } else { cfg.paths.dataset.clone() };
    explicit.or(fallback).context("no input file: pass --input or set it under [paths] in the config")
}

pub fn run(cmd: DatasetCommand, cfg: &Config) -> Result<()> {
    match cmd {
        DatasetCommand::Validate(a) => validate(a, cfg),
        DatasetCommand::Stats(a) => stats(a, cfg),
        DatasetCommand::Distractors(a) => distractors(a, cfg),
    }
}

fn validate(a: InputArgs, cfg: &Config) -> Result<()> {
    let path = input_path(a.input, a.multi_turn, cfg)?;
    let (accepted, rejected): (usize, Vec<Rejection>) = if a.multi_turn {
        let l = load_multi_turn(&path, LoadMode::Lenient)?;
        (l.items.len(), l.rejected)
    } else {
        let l = load_single_turn(&path, LoadMode::Lenient)?;
        (l.items.len(), l.rejected)
    };
    for r in &rejected {
        println!("{r}");
    }
    println!("{}: {accepted} accepted, {} rejected", path.display(), rejected.len());
    if let Some(out) = &a.out {
        write_jsonl(create(out)?, &rejected)?;
    }
    if a.strict && !rejected.is_empty() {
        return Err(ValidationFailed(rejected.len()).into());
    }
    Ok(())
}

fn stats(a: StatsArgs, cfg: &Config) -> Result<()> {
    let path = input_path(a.input, a.multi_turn, cfg)?;
    if a.multi_turn {
        let s = compute_multi_turn_stats(&load_multi_turn(&path, LoadMode::Lenient)?.items);
        let mut rows = vec![
            vec!["conversations".into(), s.n_conversations.to_string()],
            vec!["normal".into(), s.n_normal.to_string()],
            vec!["faulty".into(), s.n_faulty.to_string()],
        ];
        rows.extend(s.faulty_by_case.iter().map(|(c, n)| vec![format!("faulty: {c}"), n.to_string()]));
        rows.extend(s.by_depth.iter().map(|(d, n)| vec![format!("depth {d}"), n.to_string()]));
        print!("{}", table(&["statistic", "count"], &rows));
        if let Some(out) = &a.out {
            write_json(out, &s)?;
        }
    } else {
        let s = compute_stats(&load_single_turn(&path, LoadMode::Lenient)?.items);
        let rows = vec![
            vec!["topics".into(), s.n_topics.to_string()],
            vec!["facets".into(), s.n_facets.to_string()],
            vec!["questions".into(), s.n_questions.to_string()],
            vec!["question-answer pairs".into(), s.n_qa_pairs.to_string()],
        ];
        print!("{}", table(&["statistic", "count"], &rows));
        if let Some(out) = &a.out {
            write_json(out, &s)?;
        }
    }
    Ok(())
}

fn distractors(a: DistractorArgs, cfg: &Config) -> Result<()> {
    let path = input_path(a.input, false, cfg)?;
    let examples = load_single_turn(&path, LoadMode::Lenient)?.items;
    let records = build_distractor_records(&examples, a.seed, &cfg.markers)?;
    let mut w = create(&a.out)?;
    write_jsonl(&mut w, &records)?;
    w.flush()?;
    println!("wrote {} training rows to {}", records.len(), a.out.display());
    Ok(())
}
