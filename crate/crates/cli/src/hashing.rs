use std::path::Path;

use crate::error::{CliError, Result};

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Digest of a file's bytes; identifies the corpus an artifact came from.
pub fn file_digest(path: &Path) -> Result<u64> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Io { path: path.display().to_string(), source: e })?;
    Ok(fnv1a(&bytes))
}

/// The tag stamped into run files, checkpoints, indexes and vector files:
/// config hash then corpus digest.
pub fn artifact_tag(config_hash: u64, corpus_digest: u64) -> String {
    format!("lexret-{config_hash:016x}-{corpus_digest:016x}")
}

/// Pull the corpus digest back out of an artifact tag.
pub fn corpus_digest_of_tag(tag: &str) -> Option<u64> {
    let rest = tag.strip_prefix("lexret-")?;
    let (_, corpus) = rest.split_once('-')?;
    u64::from_str_radix(corpus, 16).ok()
}
