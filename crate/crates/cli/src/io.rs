//! File plumbing shared by the subcommands: TSV corpora and query sets,
//! atomic writes, prerequisite checks.

use std::path::Path;

use crate::error::{CliError, Result};

/// Write-temp-then-rename; concurrent readers never observe a torn file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Io { path: parent.display().to_string(), source: e })?;
    }
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, bytes)
        .map_err(|e| CliError::Io { path: tmp.display().to_string(), source: e })?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Io { path: path.display().to_string(), source: e })
}

/// `id \t text` records, one per line.
pub fn read_tsv_texts(path: &Path, kind: &'static str) -> Result<Vec<(String, String)>> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io { path: path.display().to_string(), source: e })?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let Some((id, text)) = line.split_once('\t') else {
            return Err(CliError::InputFormat {
                detail: format!("{}:{}: {kind} line has no tab separator", path.display(), i + 1),
            });
        };
        if id.is_empty() {
            return Err(CliError::InputFormat {
                detail: format!("{}:{}: empty {kind} id", path.display(), i + 1),
            });
        }
        out.push((id.to_string(), text.to_string()));
    }
    if out.is_empty() {
        return Err(CliError::InputFormat {
            detail: format!("{}: no {kind} records", path.display()),
        });
    }
    Ok(out)
}

pub fn write_tsv_texts(path: &Path, records: &[(String, String)]) -> Result<()> {
    let mut content = String::new();
    for (id, text) in records {
        content.push_str(id);
        content.push('\t');
        content.push_str(text);
        content.push('\n');
    }
    atomic_write(path, content.as_bytes())
}

/// Fail with an ordering message when an upstream artifact is missing.
pub fn require(path: &Path, artifact: &'static str, producer: &'static str) -> Result<()> {
    if !path.exists() {
        return Err(CliError::MissingPrerequisite {
            artifact,
            path: path.display().to_string(),
            producer,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.tsv");
        let records = vec![
            ("d1".to_string(), "hello world".to_string()),
            ("d2".to_string(), "another doc".to_string()),
        ];
        write_tsv_texts(&path, &records).unwrap();
        assert_eq!(read_tsv_texts(&path, "document").unwrap(), records);
    }

    #[test]
    fn missing_tab_is_reported_with_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "d1 no tab here\n").unwrap();
        match read_tsv_texts(&path, "document") {
            Err(CliError::InputFormat { detail }) => assert!(detail.contains(":1:")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn prerequisite_check_names_the_producer() {
        let err = require(Path::new("/nonexistent/x"), "checkpoint", "pretrain").unwrap_err();
        assert!(err.to_string().contains("pretrain"));
        assert_eq!(err.exit_code(), 3);
    }
}
