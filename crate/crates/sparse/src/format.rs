//! Line-delimited interchange files for sparse and quantized vectors.
//!
//! Layout (one record per line, tab between id and entries):
//!
//! ```text
//! #lexret-sparse-v1          <- magic, first line
//! #meta <key> <value>        <- zero or more metadata lines
//! <doc_id>\t<term>:<weight> <term>:<weight> ...
//! ```
//!
//! Weights are written with Rust's shortest round-trip `f64` formatting, so
//! a read-back reproduces the exact bits. The quantized variant uses magic
//! `#lexret-quantized-v1` and integer impacts. Terms appear in ascending
//! order; a record with no entries is a bare id line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::vector::{QuantizedVector, SparseLexiconVector};

const SPARSE_MAGIC: &str = "#lexret-sparse-v1";
const QUANT_MAGIC: &str = "#lexret-quantized-v1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: expected magic {expected:?}, found {found:?}")]
    BadMagic {
        path: String,
        expected: &'static str,
        found: String,
    },

    #[error("{path}:{line}: malformed record: {detail}")]
    Malformed {
        path: String,
        line: usize,
        detail: String,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io { path: path.display().to_string(), source }
}

pub fn write_sparse_file(
    path: &Path,
    meta: &[(String, String)],
    records: &[(String, SparseLexiconVector)],
) -> Result<(), FormatError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>, s: String| -> Result<(), FormatError> {
        out.write_all(s.as_bytes()).map_err(|e| io_err(path, e))
    };
    write(&mut out, format!("{SPARSE_MAGIC}\n"))?;
    for (k, v) in meta {
        write(&mut out, format!("#meta {k} {v}\n"))?;
    }
    for (id, vec) in records {
        let entries: Vec<String> = vec.entries().iter().map(|(t, w)| format!("{t}:{w}")).collect();
        write(&mut out, format!("{id}\t{}\n", entries.join(" ")))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_sparse_file(
    path: &Path,
) -> Result<(Vec<(String, String)>, Vec<(String, SparseLexiconVector)>), FormatError> {
    let (meta, lines) = read_lines(path, SPARSE_MAGIC)?;
    let mut records = Vec::with_capacity(lines.len());
    for (lineno, line) in lines {
        let (id, rest) = split_record(path, lineno, &line)?;
        let mut pairs = Vec::new();
        for item in rest.split_whitespace() {
            let (t, w) = split_entry(path, lineno, item)?;
            let weight: f64 = w.parse().map_err(|_| malformed(path, lineno, item))?;
            pairs.push((t, weight));
        }
        records.push((id, SparseLexiconVector::from_pairs(pairs)));
    }
    Ok((meta, records))
}

pub fn write_quantized_file(
    path: &Path,
    meta: &[(String, String)],
    records: &[(String, QuantizedVector)],
) -> Result<(), FormatError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>, s: String| -> Result<(), FormatError> {
        out.write_all(s.as_bytes()).map_err(|e| io_err(path, e))
    };
    write(&mut out, format!("{QUANT_MAGIC}\n"))?;
    for (k, v) in meta {
        write(&mut out, format!("#meta {k} {v}\n"))?;
    }
    for (id, vec) in records {
        let entries: Vec<String> = vec.entries().iter().map(|(t, q)| format!("{t}:{q}")).collect();
        write(&mut out, format!("{id}\t{}\n", entries.join(" ")))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_quantized_file(
    path: &Path,
) -> Result<(Vec<(String, String)>, Vec<(String, QuantizedVector)>), FormatError> {
    let (meta, lines) = read_lines(path, QUANT_MAGIC)?;
    let mut records = Vec::with_capacity(lines.len());
    for (lineno, line) in lines {
        let (id, rest) = split_record(path, lineno, &line)?;
        let mut pairs = Vec::new();
        for item in rest.split_whitespace() {
            let (t, q) = split_entry(path, lineno, item)?;
            let impact: u8 = q.parse().map_err(|_| malformed(path, lineno, item))?;
            pairs.push((t, impact));
        }
        records.push((id, QuantizedVector::from_pairs(pairs)));
    }
    Ok((meta, records))
}

type RawLines = (Vec<(String, String)>, Vec<(usize, String)>);

fn read_lines(path: &Path, magic: &'static str) -> Result<RawLines, FormatError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut meta = Vec::new();
    let mut records = Vec::new();
    let mut saw_magic = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let lineno = i + 1;
        if lineno == 1 {
            if line != magic {
                return Err(FormatError::BadMagic {
                    path: path.display().to_string(),
                    expected: magic,
                    found: line,
                });
            }
            saw_magic = true;
            continue;
        }
        if let Some(rest) = line.strip_prefix("#meta ") {
            let mut it = rest.splitn(2, ' ');
            let k = it.next().unwrap_or_default().to_string();
            let v = it.next().unwrap_or_default().to_string();
            meta.push((k, v));
            continue;
        }
        if line.is_empty() {
            continue;
        }
        records.push((lineno, line));
    }
    if !saw_magic {
        return Err(FormatError::BadMagic {
            path: path.display().to_string(),
            expected: magic,
            found: String::new(),
        });
    }
    Ok((meta, records))
}

fn split_record<'a>(
    path: &Path,
    lineno: usize,
    line: &'a str,
) -> Result<(String, &'a str), FormatError> {
    match line.split_once('\t') {
        Some((id, rest)) if !id.is_empty() => Ok((id.to_string(), rest)),
        None if !line.is_empty() => Ok((line.to_string(), "")),
        _ => Err(malformed(path, lineno, line)),
    }
}

fn split_entry(path: &Path, lineno: usize, item: &str) -> Result<(u32, String), FormatError> {
    let (t, rest) = item
        .split_once(':')
        .ok_or_else(|| malformed(path, lineno, item))?;
    let term: u32 = t.parse().map_err(|_| malformed(path, lineno, item))?;
    Ok((term, rest.to_string()))
}

fn malformed(path: &Path, line: usize, detail: &str) -> FormatError {
    FormatError::Malformed {
        path: path.display().to_string(),
        line,
        detail: detail.to_string(),
    }
}
