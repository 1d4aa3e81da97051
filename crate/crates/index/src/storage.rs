//! Versioned on-disk index format.
//!
//! ```text
//! magic   7 bytes  "LEXRIDX"
//! version u16
//! tag     u16 length + utf-8 bytes (config hash carried by the pipeline)
//! counts  u32 num_docs, u32 num_terms
//! docs    num_docs x u32 doc id (ascending)
//! lists   per term: u32 length, then length x (u32 doc id, u8 impact)
//! digest  u64 FNV-1a over everything above
//! ```
//!
//! All integers little-endian. Posting entries dominate at 3 bytes of
//! payload each (2-byte term ids are implicit in list position; the doc id
//! costs 2 of its 4 bytes against delta coding we deliberately skip), so
//! the accounted size is `3 * postings + container_overhead`.

use std::path::Path;

use thiserror::Error;

use crate::impact::ImpactIndex;

pub const INDEX_FORMAT_VERSION: u16 = 1;
const MAGIC: &[u8; 7] = b"LEXRIDX";

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: not an index file (bad magic)")]
    BadMagic { path: String },

    #[error("{path}: unsupported index format version {found} (supported: {supported})")]
    UnsupportedVersion {
        path: String,
        found: u16,
        supported: u16,
    },

    #[error("{path}: truncated index file")]
    Truncated { path: String },

    #[error("{path}: checksum mismatch (stored {stored:#x}, computed {computed:#x})")]
    ChecksumMismatch {
        path: String,
        stored: u64,
        computed: u64,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> StorageError {
    StorageError::Io { path: path.display().to_string(), source }
}

/// Serialize the index. Byte-identical output for equal inputs.
pub fn save_index(path: &Path, index: &ImpactIndex, tag: &str) -> Result<(), StorageError> {
    let bytes = encode(index, tag);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn load_index(path: &Path) -> Result<(ImpactIndex, String), StorageError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode(&bytes, path)
}

/// Bytes of posting payload: 3 per activated (term, doc) entry.
pub fn posting_payload_bytes(index: &ImpactIndex) -> u64 {
    3 * index.num_postings()
}

/// Everything in the file that is not posting payload: header, tag,
/// document table, per-list length words, 2 of the 4 stored doc-id bytes
/// per posting, and the trailing digest.
pub fn container_overhead_bytes(index: &ImpactIndex, tag: &str) -> u64 {
    let header = MAGIC.len() as u64 + 2 + 2 + tag.len() as u64 + 4 + 4;
    let doc_table = 4 * index.num_docs() as u64;
    let list_lengths = 4 * index.num_terms() as u64;
    let wide_doc_ids = 2 * index.num_postings();
    header + doc_table + list_lengths + wide_doc_ids + 8
}

fn encode(index: &ImpactIndex, tag: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&INDEX_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tag.len() as u16).to_le_bytes());
    out.extend_from_slice(tag.as_bytes());
    out.extend_from_slice(&(index.num_docs() as u32).to_le_bytes());
    out.extend_from_slice(&index.num_terms().to_le_bytes());
    for &doc in index.doc_ids() {
        out.extend_from_slice(&doc.to_le_bytes());
    }
    for term in 0..index.num_terms() {
        let list = index.postings(term);
        out.extend_from_slice(&(list.len() as u32).to_le_bytes());
        for &(doc, impact) in list {
            out.extend_from_slice(&doc.to_le_bytes());
            out.push(impact);
        }
    }
    let digest = fnv1a(&out);
    out.extend_from_slice(&digest.to_le_bytes());
    out
}

fn decode(bytes: &[u8], path: &Path) -> Result<(ImpactIndex, String), StorageError> {
    let mut cursor = Cursor { bytes, pos: 0, path };
    let magic = cursor.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(StorageError::BadMagic { path: path.display().to_string() });
    }
    let version = cursor.u16()?;
    if version != INDEX_FORMAT_VERSION {
        return Err(StorageError::UnsupportedVersion {
            path: path.display().to_string(),
            found: version,
            supported: INDEX_FORMAT_VERSION,
        });
    }
    let tag_len = cursor.u16()? as usize;
    let tag = String::from_utf8_lossy(cursor.take(tag_len)?).into_owned();
    let num_docs = cursor.u32()? as usize;
    let num_terms = cursor.u32()? as usize;
    let mut doc_ids = Vec::with_capacity(num_docs);
    for _ in 0..num_docs {
        doc_ids.push(cursor.u32()?);
    }
    let mut postings = Vec::with_capacity(num_terms);
    for _ in 0..num_terms {
        let len = cursor.u32()? as usize;
        let mut list = Vec::with_capacity(len);
        for _ in 0..len {
            let doc = cursor.u32()?;
            let impact = cursor.u8()?;
            list.push((doc, impact));
        }
        postings.push(list);
    }
    let payload_end = cursor.pos;
    let stored = cursor.u64()?;
    let computed = fnv1a(&bytes[..payload_end]);
    if stored != computed {
        return Err(StorageError::ChecksumMismatch {
            path: path.display().to_string(),
            stored,
            computed,
        });
    }
    Ok((ImpactIndex::from_parts(postings, doc_ids), tag))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StorageError> {
        if self.pos + n > self.bytes.len() {
            return Err(StorageError::Truncated { path: self.path.display().to_string() });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, StorageError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, StorageError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, StorageError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, StorageError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
