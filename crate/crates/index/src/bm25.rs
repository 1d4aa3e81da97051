//! Okapi BM25 over token-id documents: the lexical baseline and the
//! negative source for the first fine-tuning stage.

use std::collections::BTreeMap;

/// `k1`/`b` defaults follow the common term-based system configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

/// Real-valued hit used by BM25 (impact search scores are integers).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredHit {
    pub doc_id: u32,
    pub score: f64,
}

/// Corpus statistics for BM25 scoring: document frequencies, per-document
/// term frequencies and lengths, and the average length.
#[derive(Debug, Clone)]
pub struct Bm25Stats {
    params: Bm25Params,
    num_docs: usize,
    avg_len: f64,
    doc_ids: Vec<u32>,
    doc_lens: Vec<usize>,
    /// term -> [(doc ordinal, term frequency)], doc ordinals ascending.
    postings: BTreeMap<u32, Vec<(usize, u32)>>,
}

impl Bm25Stats {
    /// Build from (doc id, token ids). Document ids must be unique; token
    /// order inside a document is irrelevant.
    pub fn build(docs: &[(u32, Vec<u32>)], params: Bm25Params) -> Bm25Stats {
        let mut ordered: Vec<(u32, &Vec<u32>)> = docs.iter().map(|(id, t)| (*id, t)).collect();
        ordered.sort_by_key(|(id, _)| *id);

        let mut doc_ids = Vec::with_capacity(ordered.len());
        let mut doc_lens = Vec::with_capacity(ordered.len());
        let mut postings: BTreeMap<u32, Vec<(usize, u32)>> = BTreeMap::new();
        for (ordinal, (id, tokens)) in ordered.iter().enumerate() {
            doc_ids.push(*id);
            doc_lens.push(tokens.len());
            let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
            for &t in tokens.iter() {
                *counts.entry(t).or_insert(0) += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push((ordinal, tf));
            }
        }
        let total_len: usize = doc_lens.iter().sum();
        let avg_len = if doc_lens.is_empty() {
            0.0
        } else {
            total_len as f64 / doc_lens.len() as f64
        };
        Bm25Stats {
            params,
            num_docs: doc_ids.len(),
            avg_len,
            doc_ids,
            doc_lens,
            postings,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_frequency(&self, term: u32) -> usize {
        self.postings.get(&term).map(|p| p.len()).unwrap_or(0)
    }

    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`; non-negative for any df <= N.
    pub fn idf(&self, term: u32) -> f64 {
        let n = self.num_docs as f64;
        let df = self.doc_frequency(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Exact top-k BM25. Duplicate query tokens contribute once per
    /// occurrence. Tie rule: descending score, ascending doc id.
    pub fn search(&self, query_tokens: &[u32], k: usize) -> Vec<ScoredHit> {
        let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
        let Bm25Params { k1, b } = self.params;
        for &term in query_tokens {
            let Some(postings) = self.postings.get(&term) else { continue };
            let idf = self.idf(term);
            for &(ordinal, tf) in postings {
                let tf = tf as f64;
                let len_norm = 1.0 - b + b * self.doc_lens[ordinal] as f64 / self.avg_len;
                let contribution = idf * tf * (k1 + 1.0) / (tf + k1 * len_norm);
                *scores.entry(ordinal).or_insert(0.0) += contribution;
            }
        }
        let mut hits: Vec<ScoredHit> = scores
            .into_iter()
            .filter(|(_, s)| *s > 0.0)
            .map(|(ordinal, score)| ScoredHit { doc_id: self.doc_ids[ordinal], score })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.doc_id.cmp(&b.doc_id)));
        hits.truncate(k);
        hits
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_term_contributes_nothing() {
        let docs = vec![(1, vec![0, 1, 2]), (2, vec![0, 3])];
        let stats = Bm25Stats::build(&docs, Bm25Params::default());
        let with = stats.search(&[0], 10);
        let with_ghost = stats.search(&[0, 99], 10);
        assert_eq!(with, with_ghost);
    }

    #[test]
    fn hand_computed_two_doc_corpus() {
        // doc 1 = [5 5 7], doc 2 = [5 9 9 9]; query = [5, 9]; k1=0.9, b=0.4.
        let docs = vec![(1, vec![5, 5, 7]), (2, vec![5, 9, 9, 9])];
        let stats = Bm25Stats::build(&docs, Bm25Params { k1: 0.9, b: 0.4 });
        let (k1, b) = (0.9f64, 0.4f64);
        let n = 2.0f64;
        let avg = 3.5f64;

        // Independent arithmetic straight from the published formula.
        let idf5 = ((n - 2.0 + 0.5) / (2.0 + 0.5) + 1.0).ln();
        let idf9 = ((n - 1.0 + 0.5) / (1.0 + 0.5) + 1.0).ln();
        let score = |tf: f64, len: f64, idf: f64| {
            idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg))
        };
        let expect_doc1 = score(2.0, 3.0, idf5);
        let expect_doc2 = score(1.0, 4.0, idf5) + score(3.0, 4.0, idf9);

        let hits = stats.search(&[5, 9], 10);
        let by_id = |id: u32| hits.iter().find(|h| h.doc_id == id).unwrap().score;
        assert!((by_id(1) - expect_doc1).abs() < 1e-9, "{} vs {}", by_id(1), expect_doc1);
        assert!((by_id(2) - expect_doc2).abs() < 1e-9, "{} vs {}", by_id(2), expect_doc2);
    }

    #[test]
    fn doc_with_query_term_outranks_doc_without() {
        // Same lengths, doc 1 carries the query term, doc 2 does not.
        let docs = vec![(1, vec![4, 8]), (2, vec![3, 8])];
        let stats = Bm25Stats::build(&docs, Bm25Params::default());
        let hits = stats.search(&[4], 10);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc_id, 1);
        assert!(hits[0].score > 0.0);
    }

    #[test]
    fn idf_is_nonnegative_even_at_full_df() {
        let docs = vec![(1, vec![2]), (2, vec![2]), (3, vec![2])];
        let stats = Bm25Stats::build(&docs, Bm25Params::default());
        assert!(stats.idf(2) > 0.0);
    }

    #[test]
    fn tie_rule_ascending_doc_id() {
        let docs = vec![(8, vec![1, 2]), (3, vec![1, 2])];
        let stats = Bm25Stats::build(&docs, Bm25Params::default());
        let hits = stats.search(&[1], 10);
        assert_eq!(hits[0].doc_id, 3);
        assert_eq!(hits[1].doc_id, 8);
        assert_eq!(hits[0].score, hits[1].score);
    }
}
