//! Sparse lexicon-weighted vectors and their quantized form.
//!
//! A text is represented by non-negative weights over vocabulary terms;
//! zeros are never stored. Documents are optionally truncated to their K
//! heaviest terms at indexing time, then weights are quantized to one-byte
//! integer impacts for the inverted index.

mod format;
mod vector;

pub use format::{
    read_quantized_file, read_sparse_file, write_quantized_file, write_sparse_file, FormatError,
};
pub use vector::{QuantizedVector, SparseLexiconVector, MAX_IMPACT, QUANT_SCALE};
