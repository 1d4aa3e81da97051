//! The retrieval engine: a quantized-impact inverted index with exact
//! top-k dot-product search, a brute-force oracle, an Okapi BM25 baseline,
//! and a versioned on-disk format.
//!
//! Exactness is the contract here. There is no dynamic pruning; every
//! search returns precisely what a full scan would, in the same order,
//! under one tie rule: descending score, then ascending document id.

mod bm25;
mod impact;
mod storage;

pub use bm25::{Bm25Params, Bm25Stats, ScoredHit};
pub use impact::{brute_force_search, ImpactIndex, IndexError, SearchHit};
pub use storage::{
    container_overhead_bytes, load_index, posting_payload_bytes, save_index, StorageError,
    INDEX_FORMAT_VERSION,
};
