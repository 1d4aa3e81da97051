/// Quantization scale: impacts are `floor(100 * weight)`.
pub const QUANT_SCALE: f64 = 100.0;

/// Impacts saturate at one byte so a posting entry stays 3 bytes
/// (2 for the term id, 1 for the impact).
pub const MAX_IMPACT: u8 = 255;

/// Non-negative weights over vocabulary terms, stored sparsely.
///
/// Entries are sorted by strictly increasing term id and every stored
/// weight is positive; absent terms are implicit zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseLexiconVector {
    entries: Vec<(u32, f64)>,
}

impl SparseLexiconVector {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Build from unsorted (term, weight) pairs. Non-positive weights are
    /// dropped. Panics on duplicate term ids: a term has one weight.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut entries: Vec<(u32, f64)> = pairs.into_iter().filter(|(_, w)| *w > 0.0).collect();
        entries.sort_by_key(|(t, _)| *t);
        for pair in entries.windows(2) {
            assert_ne!(pair[0].0, pair[1].0, "duplicate term id {}", pair[0].0);
        }
        SparseLexiconVector { entries }
    }

    /// Build from a dense vector indexed by term id, skipping zeros.
    pub fn from_dense(dense: &[f64]) -> Self {
        let entries = dense
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(t, w)| (t as u32, *w))
            .collect();
        SparseLexiconVector { entries }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &(t, w) in &self.entries {
            out[t as usize] = w;
        }
        out
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn weight(&self, term: u32) -> f64 {
        match self.entries.binary_search_by_key(&term, |(t, _)| *t) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn dot(&self, other: &SparseLexiconVector) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut acc = 0.0;
        while i < self.entries.len() && j < other.entries.len() {
            let (ta, wa) = self.entries[i];
            let (tb, wb) = other.entries[j];
            match ta.cmp(&tb) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += wa * wb;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Keep the K heaviest terms. Ties at the K-th weight are resolved in
    /// favor of smaller term ids, then the result is truncated to exactly K
    /// entries; retained weights are unchanged.
    pub fn topk(&self, k: usize) -> SparseLexiconVector {
        if k >= self.entries.len() {
            return self.clone();
        }
        let mut ranked: Vec<(u32, f64)> = self.entries.clone();
        // Heavier first; equal weights ordered by ascending term id.
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked.sort_by_key(|(t, _)| *t);
        SparseLexiconVector { entries: ranked }
    }

    /// Impact quantization: `floor(100 * weight)` clamped to 255, dropping
    /// entries that floor to zero.
    pub fn quantize(&self) -> QuantizedVector {
        let entries = self
            .entries
            .iter()
            .filter_map(|&(t, w)| {
                let q = (QUANT_SCALE * w).floor();
                if q < 1.0 {
                    None
                } else if q >= MAX_IMPACT as f64 {
                    Some((t, MAX_IMPACT))
                } else {
                    Some((t, q as u8))
                }
            })
            .collect();
        QuantizedVector { entries }
    }
}

/// Integer-impact form of a sparse vector; what the inverted index stores.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuantizedVector {
    entries: Vec<(u32, u8)>,
}

impl QuantizedVector {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Build from unsorted (term, impact) pairs; zero impacts are dropped.
    /// Panics on duplicate term ids.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, u8)>) -> Self {
        let mut entries: Vec<(u32, u8)> = pairs.into_iter().filter(|(_, q)| *q > 0).collect();
        entries.sort_by_key(|(t, _)| *t);
        for pair in entries.windows(2) {
            assert_ne!(pair[0].0, pair[1].0, "duplicate term id {}", pair[0].0);
        }
        QuantizedVector { entries }
    }

    pub fn entries(&self) -> &[(u32, u8)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn impact(&self, term: u32) -> u8 {
        match self.entries.binary_search_by_key(&term, |(t, _)| *t) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0,
        }
    }

    /// Integer dot product over shared terms.
    pub fn dot(&self, other: &QuantizedVector) -> u64 {
        let (mut i, mut j) = (0, 0);
        let mut acc = 0u64;
        while i < self.entries.len() && j < other.entries.len() {
            let (ta, qa) = self.entries[i];
            let (tb, qb) = other.entries[j];
            match ta.cmp(&tb) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += qa as u64 * qb as u64;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}
