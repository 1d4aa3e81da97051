//! TREC qrels / run file parsing and the metric report writers.
//!
//! Qrels lines: `qid 0 docid rel`. Run lines: `qid Q0 docid rank score tag`.
//! Run rankings are ordered by the rank column.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::metrics::{EvalError, Qrels, RunList};

#[derive(Debug, Error)]
pub enum TrecError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed {kind} line: {detail}")]
    Malformed {
        path: String,
        line: usize,
        kind: &'static str,
        detail: String,
    },

    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub query_id: String,
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
}

pub fn parse_qrels(content: &str, path: &str) -> Result<Qrels, TrecError> {
    let mut qrels = Qrels::new();
    for (i, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(malformed(path, i + 1, "qrels", line));
        }
        let grade: u32 = fields[3]
            .parse()
            .map_err(|_| malformed(path, i + 1, "qrels", line))?;
        qrels.insert(fields[0], fields[2], grade);
    }
    Ok(qrels)
}

pub fn read_qrels_file(path: &Path) -> Result<Qrels, TrecError> {
    let content = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_qrels(&content, &path.display().to_string())
}

/// Parse a run file; returns the rankings plus the tag of the first line
/// (runs written by this workspace carry their config hash in the tag).
pub fn parse_run(content: &str, path: &str) -> Result<(RunList, Option<String>), TrecError> {
    let mut per_query: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    let mut tag = None;
    for (i, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 || fields[1] != "Q0" {
            return Err(malformed(path, i + 1, "run", line));
        }
        let rank: usize = fields[3]
            .parse()
            .map_err(|_| malformed(path, i + 1, "run", line))?;
        let _score: f64 = fields[4]
            .parse()
            .map_err(|_| malformed(path, i + 1, "run", line))?;
        if tag.is_none() {
            tag = Some(fields[5].to_string());
        }
        per_query
            .entry(fields[0].to_string())
            .or_default()
            .push((rank, fields[2].to_string()));
    }
    let mut run = RunList::new();
    for (query, mut docs) in per_query {
        docs.sort_by_key(|(rank, _)| *rank);
        run.set_ranking(&query, docs.into_iter().map(|(_, d)| d).collect())?;
    }
    Ok((run, tag))
}

pub fn read_run_file(path: &Path) -> Result<(RunList, Option<String>), TrecError> {
    let content = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_run(&content, &path.display().to_string())
}

/// Write ranked results in TREC run format: `qid Q0 docid rank score tag`.
/// Entries must arrive grouped by query in rank order.
pub fn write_run_file(path: &Path, entries: &[RunEntry], tag: &str) -> Result<(), TrecError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for e in entries {
        writeln!(out, "{} Q0 {} {} {} {}", e.query_id, e.doc_id, e.rank, e.score, tag)
            .map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// Emit metrics twice: a line-delimited `name value` text report and a JSON
/// object for consumers. Metric order follows the given slice.
pub fn write_metric_report(
    text_path: &Path,
    json_path: &Path,
    metrics: &[(String, f64)],
    meta: &[(String, String)],
) -> Result<(), TrecError> {
    let file = File::create(text_path).map_err(|e| io_err(text_path, e))?;
    let mut out = BufWriter::new(file);
    for (k, v) in meta {
        writeln!(out, "#meta {k} {v}").map_err(|e| io_err(text_path, e))?;
    }
    for (name, value) in metrics {
        writeln!(out, "{name} {value:.6}").map_err(|e| io_err(text_path, e))?;
    }
    out.flush().map_err(|e| io_err(text_path, e))?;

    let mut obj = serde_json::Map::new();
    for (k, v) in meta {
        obj.insert(format!("meta.{k}"), serde_json::Value::String(v.clone()));
    }
    for (name, value) in metrics {
        obj.insert(
            name.clone(),
            serde_json::Number::from_f64(*value)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
        );
    }
    let json = serde_json::to_string_pretty(&serde_json::Value::Object(obj)).expect("serializable");
    std::fs::write(json_path, json + "\n").map_err(|e| io_err(json_path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> TrecError {
    TrecError::Io { path: path.display().to_string(), source }
}

fn malformed(path: &str, line: usize, kind: &'static str, detail: &str) -> TrecError {
    TrecError::Malformed {
        path: path.to_string(),
        line,
        kind,
        detail: detail.to_string(),
    }
}
