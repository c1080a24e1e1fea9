//! Qrels (`qid 0 docid grade`), run files (`qid Q0 docid rank score tag`)
//! and collection ingestion.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::Deserialize;

use super::{Qrels, RankedList, RetrievalError};

/// Negative grades are read as 0.
pub fn read_qrels<R: BufRead>(input: R) -> Result<Qrels, RetrievalError> {
    let mut q = Qrels::new();
    let mut clamped = 0usize;
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| RetrievalError::Parse { line: i + 1, reason: e.to_string() })?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() || f[0].starts_with('#') {
            continue;
        }
        if f.len() != 4 {
            return Err(RetrievalError::Parse { line: i + 1, reason: format!("expected 4 fields, found {}", f.len()) });
        }
        let grade: i64 = f[3]
            .parse()
            .map_err(|_| RetrievalError::Parse { line: i + 1, reason: format!("grade '{}' is not an integer", f[3]) })?;
        if grade < 0 {
            clamped += 1;
        }
        q.insert(f[0], f[2], grade.max(0) as u32);
    }
    if clamped > 0 {
        log::warn!("{clamped} negative qrels grades read as 0");
    }
    Ok(q)
}

pub fn write_qrels<W: Write>(qrels: &Qrels, mut out: W) -> std::io::Result<()> {
    for (q, d, g) in qrels.iter() {
        writeln!(out, "{q} 0 {d} {g}")?;
    }
    out.flush()
}

/// Entries are ordered by the rank column.
pub fn read_run<R: BufRead>(input: R) -> Result<BTreeMap<String, RankedList>, RetrievalError> {
    let mut rows: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| RetrievalError::Parse { line: i + 1, reason: e.to_string() })?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != 6 {
            return Err(RetrievalError::Parse { line: i + 1, reason: format!("expected 6 fields, found {}", f.len()) });
        }
        let bad = |what: &str| RetrievalError::Parse { line: i + 1, reason: format!("invalid {what}") };
        let rank: usize = f[3].parse().map_err(|_| bad("rank"))?;
        let score: f64 = f[4].parse().map_err(|_| bad("score"))?;
        rows.entry(f[0].to_string()).or_default().push((rank, f[2].to_string(), score));
    }
    Ok(rows
        .into_iter()
        .map(|(qid, mut r)| {
            r.sort_by_key(|x| x.0);
            let entries = r.into_iter().map(|(_, d, s)| (d, s)).collect();
            (qid.clone(), RankedList { qid, entries })
        })
        .collect())
}

pub fn write_run<'a, W, I>(lists: I, tag: &str, mut out: W) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a RankedList>,
{
    for l in lists {
        for (i, (doc, score)) in l.entries.iter().enumerate() {
            writeln!(out, "{} Q0 {} {} {} {}", l.qid, doc, i + 1, score, tag)?;
        }
    }
    out.flush()
}

#[derive(Deserialize)]
struct DocRecord {
    #[serde(alias = "docid", alias = "doc_id")]
    id: String,
    #[serde(alias = "contents", alias = "body")]
    text: String,
}

/// JSON lines with `id` and `text` fields (aliases `docid`/`doc_id` and
/// `contents`/`body`).
pub fn parse_collection_records(raw: &str) -> Result<Vec<(String, String)>, RetrievalError> {
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<DocRecord>(l)
                .map(|r| (r.id, r.text))
                .map_err(|e| RetrievalError::Parse { line: i + 1, reason: e.to_string() })
        })
        .collect()
}

/// A directory of plain-text files (doc id = file name) or a single
/// JSON-lines file.
pub fn load_collection(path: &Path) -> Result<Vec<(String, String)>, RetrievalError> {
    let io = |e: std::io::Error| RetrievalError::Io { path: path.display().to_string(), source: e };
    if path.is_dir() {
        let mut docs = Vec::new();
        let mut entries: Vec<_> = std::fs::read_dir(path).map_err(io)?.collect::<Result<_, _>>().map_err(io)?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let p = e.path();
            if !p.is_file() {
                continue;
            }
            let id = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let text = std::fs::read_to_string(&p)
                .map_err(|source| RetrievalError::Io { path: p.display().to_string(), source })?;
            docs.push((id, text));
        }
        Ok(docs)
    } else {
        parse_collection_records(&std::fs::read_to_string(path).map_err(io)?)
    }
}
