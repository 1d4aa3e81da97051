//! Versioned binary checkpoint: model config, head layout, and every named
//! parameter tensor with its shape. Write is atomic (temp file + rename)
//! and byte-identical for equal weights.
//!
//! ```text
//! magic    8 bytes "LEXRCKPT"
//! version  u16
//! tag      u16 length + utf-8 (config hash carried by the pipeline)
//! layout   u8 (0 tied-default, 1 shared-with-encoder, 2 extra-head)
//! config   7 x u32: vocab, hidden, enc layers, dec layers, heads, max seq, ff mult
//! params   u32 count, then per tensor: u16 name length + name,
//!          u8 ndim, ndim x u32 dims, numel x f64 (little-endian bits)
//! digest   u64 FNV-1a over everything above
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::config::ModelConfig;
use crate::weights::{HeadLayout, TransformerWeights};

pub const CHECKPOINT_FORMAT_VERSION: u16 = 1;
const MAGIC: &[u8; 8] = b"LEXRCKPT";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: not a checkpoint file (bad magic)")]
    BadMagic { path: String },

    #[error("{path}: unsupported checkpoint version {found} (supported: {supported})")]
    UnsupportedVersion { path: String, found: u16, supported: u16 },

    #[error("{path}: truncated checkpoint")]
    Truncated { path: String },

    #[error("{path}: checksum mismatch")]
    ChecksumMismatch { path: String },

    #[error("{path}: checkpoint incompatible with its config: {detail}")]
    Incompatible { path: String, detail: String },
}

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io { path: path.display().to_string(), source }
}

pub fn save_checkpoint(
    path: &Path,
    weights: &TransformerWeights,
    tag: &str,
) -> Result<(), CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tag.len() as u16).to_le_bytes());
    out.extend_from_slice(tag.as_bytes());
    out.push(match weights.head_layout {
        HeadLayout::TiedDefault => 0,
        HeadLayout::SharedWithEncoder => 1,
        HeadLayout::ExtraHead => 2,
    });
    let c = &weights.config;
    for v in [
        c.vocab_size,
        c.hidden_size,
        c.encoder_layers,
        c.decoder_layers,
        c.attention_heads,
        c.max_sequence_length,
        c.ff_multiplier,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let mut count = 0u32;
    weights.for_each_param(|_, _| count += 1);
    out.extend_from_slice(&count.to_le_bytes());
    weights.for_each_param(|name, tensor| {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(tensor.shape().len() as u8);
        for &dim in tensor.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    let digest = fnv1a(&out);
    out.extend_from_slice(&digest.to_le_bytes());

    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &out).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(TransformerWeights, String), CheckpointError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let display = path.display().to_string();
    let mut cur = Cursor { bytes: &bytes, pos: 0, path: &display };

    if cur.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic { path: display.clone() });
    }
    let version = cur.u16()?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            path: display.clone(),
            found: version,
            supported: CHECKPOINT_FORMAT_VERSION,
        });
    }
    let tag_len = cur.u16()? as usize;
    let tag = String::from_utf8_lossy(cur.take(tag_len)?).into_owned();
    let layout = match cur.u8()? {
        0 => HeadLayout::TiedDefault,
        1 => HeadLayout::SharedWithEncoder,
        2 => HeadLayout::ExtraHead,
        other => {
            return Err(CheckpointError::Incompatible {
                path: display.clone(),
                detail: format!("unknown head layout {other}"),
            })
        }
    };
    let config = ModelConfig {
        vocab_size: cur.u32()? as usize,
        hidden_size: cur.u32()? as usize,
        encoder_layers: cur.u32()? as usize,
        decoder_layers: cur.u32()? as usize,
        attention_heads: cur.u32()? as usize,
        max_sequence_length: cur.u32()? as usize,
        ff_multiplier: cur.u32()? as usize,
    };

    let count = cur.u32()? as usize;
    let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = String::from_utf8_lossy(cur.take(name_len)?).into_owned();
        let ndim = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(cur.f64()?);
        }
        tensors.insert(name, (shape, data));
    }
    let payload_end = cur.pos;
    let stored = cur.u64()?;
    if stored != fnv1a(&bytes[..payload_end]) {
        return Err(CheckpointError::ChecksumMismatch { path: display.clone() });
    }

    // Materialize a skeleton and fill it by name so field order changes in
    // future code cannot silently scramble parameters.
    let mut weights = TransformerWeights::init(config, layout, 0);
    let mut missing = Vec::new();
    weights.for_each_param_mut(|name, tensor| match tensors.remove(name) {
        Some((shape, data)) if shape == tensor.shape() => {
            tensor.data_mut().copy_from_slice(&data);
            tensor.grad = None;
        }
        Some((shape, _)) => missing.push(format!(
            "{name}: shape {:?} in file, {:?} expected",
            shape,
            tensor.shape()
        )),
        None => missing.push(format!("{name}: absent from file")),
    });
    if !missing.is_empty() {
        return Err(CheckpointError::Incompatible {
            path: display.clone(),
            detail: missing.join("; "),
        });
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(CheckpointError::Incompatible {
            path: display,
            detail: format!("unexpected parameter {extra} in file"),
        });
    }
    Ok((weights, tag))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated { path: self.path.to_string() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
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
