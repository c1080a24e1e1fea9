use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use clarisim::corpus::{load_multi_turn, load_single_turn, LoadMode, QAExample};
use clarisim::nlgmetrics::{evaluate_corpus, BleuMode, MetricError, WordEmbeddingTable};
use clarisim::retrieval::{
    bm25_search, build_index, load_collection, read_qrels, run_experiment, write_run, AnswerSet, ExpandedQuery,
    ExperimentConfig, RankedList, QUERY_ONLY,
};
use clarisim::simulator::read_answer_records;
use clarisim::stats::{interrater_pairing, parse_judgments, trinomial_test_with, JudgmentTriple, Sidedness, TwoSidedMethod};
use clarisim::text::normalize_key;

use crate::config::Config;
use crate::output::{create, fmt_f, table, write_json};

const METRICS: [&str; 5] = ["ndcg@1", "ndcg@5", "ndcg@20", "p@1", "mrr@100"];

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// BLEU-1/2/3, ROUGE-L and embedding similarity of answers against references.
    Nlg(NlgArgs),
    /// BM25 retrieval with the query alone and expanded with each answer set.
    Retrieval(RetrievalArgs),
    /// Trinomial test on pairwise preference judgments.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BleuArg {
    /// Mean of sentence-level scores.
    Sentence,
    /// Pooled corpus-level BLEU.
    Corpus,
}

#[derive(Debug, Args)]
pub struct NlgArgs {
    /// Hypotheses: answer records, a single-turn TSV or a conversation file.
    #[arg(long)]
    hyp: PathBuf,
    /// References, in any of the --hyp formats.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Word vectors (text format) for the embedding metric.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// How BLEU is aggregated over pairs.
    #[arg(long, value_enum, default_value = "sentence")]
    bleu_mode: BleuArg,
    /// Metric report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrievalArgs {
    /// Directory of text files or a JSON-lines collection.
    #[arg(long)]
    collection: Option<PathBuf>,
    /// TREC qrels keyed by `topic-facet`.
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Single-turn TSV whose rows are the evaluation units.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Answer records of one condition, as NAME=PATH; repeatable.
    #[arg(long = "answers", value_name = "NAME=PATH")]
    answers: Vec<String>,
    /// Ranking depth (overrides retrieval.depth).
    #[arg(long)]
    depth: Option<usize>,
    /// Run report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// TREC run of the query-only condition, one ranking per need.
    #[arg(long)]
    run: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Judgments with item_id, vote_1, vote_2 (TSV or JSON lines).
    #[arg(long, conflicts_with = "counts", required_unless_present = "counts")]
    judgments: Option<PathBuf>,
    /// Wins, losses and ties, as W,L,T.
    #[arg(long, value_name = "W,L,T")]
    counts: Option<String>,
    /// Test only whether A is preferred over B.
    #[arg(long)]
    one_sided: bool,
    /// Two-sided p as the sum of both exact tails instead of tail doubling.
    #[arg(long, conflicts_with = "one_sided")]
    both_tails: bool,
    /// Counts and test result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cmd: EvalCommand, cfg: &Config) -> Result<()> {
    match cmd {
        EvalCommand::Nlg(a) => nlg(a, cfg),
        EvalCommand::Retrieval(a) => retrieval(a, cfg),
        EvalCommand::Compare(a) => compare(a),
    }
}

/// `(id, text)` rows keyed by `topic-facet/turn/normalized question`. Repeated
/// keys get a `#k` suffix by order of appearance.
fn read_texts(path: &Path) -> Result<Vec<(String, String)>> {
    let mut rows: Vec<(String, String)> = Vec::new();
    let is_tsv = matches!(path.extension().and_then(|e| e.to_str()), Some("tsv" | "txt"));
    if is_tsv {
        for e in load_single_turn(path, LoadMode::Strict)?.items {
            rows.push((format!("{}/1/{}", e.need.key().qid(), normalize_key(&e.question)), e.answer));
        }
    } else {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        match read_answer_records(BufReader::new(file)) {
            Ok(records) => {
                for r in records {
                    let id = format!("{}-{}/{}/{}", r.topic_id, r.facet_id, r.turn, normalize_key(&r.question));
                    rows.push((id, r.answer));
                }
            }
            Err((line, record_err)) => {
                let convs = load_multi_turn(path, LoadMode::Strict).map_err(|conv_err| {
                    anyhow!(
                        "{}: neither answer records (line {line}: {record_err}) nor conversations ({conv_err})",
                        path.display()
                    )
                })?;
                for c in convs.items {
                    for (i, t) in c.turns.iter().enumerate() {
                        rows.push((format!("{}/{}/{}", c.need.key().qid(), i + 1, normalize_key(&t.question)), t.answer.clone()));
                    }
                }
            }
        }
    }
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (id, _) in rows.iter_mut() {
        let n = seen.entry(id.clone()).or_default();
        if *n > 0 {
            id.push_str(&format!("#{n}"));
        }
        *n += 1;
    }
    Ok(rows)
}

/// Reorders `hyps` to follow `refs`, failing on the first id present on one
/// side only.
fn align(hyps: Vec<(String, String)>, refs: &[(String, String)]) -> Result<Vec<(String, String)>> {
    let mut by_id: HashMap<String, String> = hyps.iter().cloned().collect();
    let mut out = Vec::with_capacity(refs.len());
    for (id, _) in refs {
        match by_id.remove(id) {
            Some(text) => out.push((id.clone(), text)),
            None => bail!("misaligned inputs: reference '{id}' has no hypothesis"),
        }
    }
    if let Some((id, _)) = hyps.iter().find(|(id, _)| by_id.contains_key(id)) {
        bail!("misaligned inputs: hypothesis '{id}' has no reference");
    }
    Ok(out)
}

fn nlg(a: NlgArgs, cfg: &Config) -> Result<()> {
    let refs = read_texts(&a.reference)?;
    let hyps = align(read_texts(&a.hyp)?, &refs)?;
    let table_path = a.embeddings.clone().or(cfg.paths.embeddings.clone());
    let embeddings = match &table_path {
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let loaded = WordEmbeddingTable::load(BufReader::new(file)).with_context(|| format!("loading {}", p.display()))?;
            if loaded.skipped > 0 {
                log::warn!("{}: skipped {} malformed vector line(s)", p.display(), loaded.skipped);
            }
            Some(loaded.table)
        }
        None => None,
    };
    let mode = match a.bleu_mode {
        BleuArg::Sentence => BleuMode::SentenceMean,
        BleuArg::Corpus => BleuMode::Corpus,
    };
    let report = evaluate_corpus(&hyps, &refs, embeddings.as_ref(), mode).map_err(|e| match e {
        MetricError::Misaligned { hyp_id, .. } => anyhow!("misaligned inputs at '{hyp_id}'"),
        other => other.into(),
    })?;
    let m = &report.means;
    let mut rows = vec![
        vec!["BLEU-1".into(), fmt_f(m.bleu1)],
        vec!["BLEU-2".into(), fmt_f(m.bleu2)],
        vec!["BLEU-3".into(), fmt_f(m.bleu3)],
        vec!["ROUGE-L".into(), fmt_f(m.rouge_l)],
    ];
    if let Some(e) = m.embedding_avg_cs {
        rows.push(vec!["EmbeddingAvgCS".into(), fmt_f(e)]);
    }
    print!("{}", table(&["metric", "mean"], &rows));
    println!("{} pairs, {} without in-vocabulary tokens", report.examples.len(), report.oov_pairs);
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn load_answers(spec: &str) -> Result<AnswerSet> {
    let (name, path) = spec.split_once('=').with_context(|| format!("--answers '{spec}' is not NAME=PATH"))?;
    if name.is_empty() || name == QUERY_ONLY {
        bail!("--answers name '{name}' is empty or reserved");
    }
    let file = File::open(path).with_context(|| format!("opening {path}"))?;
    let records = read_answer_records(BufReader::new(file)).map_err(|(line, e)| anyhow!("{path}: line {line}: {e}"))?;
    Ok(AnswerSet { name: name.to_string(), records })
}

fn retrieval(a: RetrievalArgs, cfg: &Config) -> Result<()> {
    let need = |p: Option<PathBuf>, flag: &str, key: &str| p.with_context(|| format!("pass {flag} or set paths.{key}"));
    let coll_path = need(a.collection.or(cfg.paths.collection.clone()), "--collection", "collection")?;
    let qrels_path = need(a.qrels.or(cfg.paths.qrels.clone()), "--qrels", "qrels")?;
    let data_path = need(a.dataset.or(cfg.paths.dataset.clone()), "--dataset", "dataset")?;

    let collection = build_index(load_collection(&coll_path)?)?;
    let file = File::open(&qrels_path).with_context(|| format!("opening {}", qrels_path.display()))?;
    let qrels = read_qrels(BufReader::new(file))?;
    let dataset: Vec<QAExample> = load_single_turn(&data_path, LoadMode::Lenient)?.items;
    let mut names = BTreeSet::new();
    let mut answers = Vec::new();
    for spec in &a.answers {
        let set = load_answers(spec)?;
        if !names.insert(set.name.clone()) {
            bail!("answer set '{}' given twice", set.name);
        }
        answers.push(set);
    }
    let exp = ExperimentConfig { bm25: cfg.bm25, weights: cfg.expansion, depth: a.depth.unwrap_or(cfg.retrieval.depth) };
    let report = run_experiment(&collection, &dataset, &answers, &qrels, &exp);

    let mut headers = vec!["condition"];
    headers.extend(METRICS);
    headers.push("missing");
    let rows: Vec<Vec<String>> = report
        .conditions
        .iter()
        .map(|c| {
            let mut r = vec![c.name.clone()];
            r.extend(METRICS.iter().map(|m| fmt_f(c.means.get(m).unwrap_or(f64::NAN))));
            r.push(c.missing_answers.to_string());
            r
        })
        .collect();
    print!("{}", table(&headers, &rows));
    println!("{} queries, {} without relevant documents", report.queries, report.no_relevant);
    if !report.comparisons.is_empty() {
        let rows: Vec<Vec<String>> = report
            .comparisons
            .iter()
            .map(|c| {
                vec![
                    format!("{} vs {}", c.a, c.b),
                    c.metric.clone(),
                    fmt_f(c.mean_delta),
                    fmt_f(c.statistic),
                    format!("{:.4e}", c.p_value),
                ]
            })
            .collect();
        println!();
        print!("{}", table(&["comparison", "metric", "delta", "t", "p"], &rows));
    }
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    if let Some(path) = &a.run {
        let mut lists: Vec<RankedList> = Vec::new();
        let mut done = BTreeSet::new();
        for e in &dataset {
            let qid = e.need.key().qid();
            if done.insert(qid.clone()) {
                lists.push(bm25_search(&collection, &qid, &ExpandedQuery::query_only(&e.need.query), exp.depth, exp.bm25, exp.weights)?);
            }
        }
        write_run(&lists, QUERY_ONLY, create(path)?)?;
    }
    Ok(())
}

fn parse_counts(raw: &str) -> Result<JudgmentTriple> {
    let parts: Vec<u64> = raw
        .split(',')
        .map(|p| p.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("--counts '{raw}' must be three non-negative integers"))?;
    match parts[..] {
        [w, l, t] => Ok(JudgmentTriple::new(w, l, t)),
        _ => bail!("--counts '{raw}' must be W,L,T"),
    }
}

fn compare(a: CompareArgs) -> Result<()> {
    let triple = match (&a.judgments, &a.counts) {
        (Some(p), _) => {
            let raw = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            interrater_pairing(&parse_judgments(&raw)?)?
        }
        (None, Some(c)) => parse_counts(c)?,
        (None, None) => bail!("pass --judgments or --counts"),
    };
    let sidedness = if a.one_sided { Sidedness::OneSided } else { Sidedness::TwoSided };
    let method = if a.both_tails { TwoSidedMethod::BothTails } else { TwoSidedMethod::DoubleTail };
    let result = trinomial_test_with(triple, sidedness, method)?;
    let rows = vec![
        vec!["wins".into(), triple.wins.to_string()],
        vec!["losses".into(), triple.losses.to_string()],
        vec!["ties".into(), triple.ties.to_string()],
        vec!["statistic".into(), result.statistic.to_string()],
        vec!["p-value".into(), format!("{:.6e}", result.p_value)],
        vec!["method".into(), result.method.clone()],
    ];
    print!("{}", table(&["field", "value"], &rows));
    if let Some(out) = &a.out {
        write_json(out, &serde_json::json!({ "counts": triple, "result": result }))?;
    }
    Ok(())
}
