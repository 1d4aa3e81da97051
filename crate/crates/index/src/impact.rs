use std::collections::BTreeMap;

use lexret_sparse::QuantizedVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate document id {0} in the collection")]
    DuplicateDoc(u32),
}

/// One search result: integer impact dot product, never zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchHit {
    pub doc_id: u32,
    pub score: u64,
}

/// Inverted index over quantized vectors: per-term posting lists of
/// (doc id, impact), doc ids strictly increasing within each list.
/// Immutable after build; concurrent readers are safe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImpactIndex {
    postings: Vec<Vec<(u32, u8)>>,
    doc_ids: Vec<u32>,
    num_terms: u32,
}

impl ImpactIndex {
    /// Build from (doc id, vector) pairs. Deterministic: postings depend
    /// only on the set of documents, not their input order.
    pub fn build(docs: &[(u32, QuantizedVector)]) -> Result<ImpactIndex, IndexError> {
        let mut by_id: BTreeMap<u32, &QuantizedVector> = BTreeMap::new();
        for (id, vec) in docs {
            if by_id.insert(*id, vec).is_some() {
                return Err(IndexError::DuplicateDoc(*id));
            }
        }
        let num_terms = by_id
            .values()
            .flat_map(|v| v.entries().iter().map(|(t, _)| *t + 1))
            .max()
            .unwrap_or(0);
        let mut postings: Vec<Vec<(u32, u8)>> = vec![Vec::new(); num_terms as usize];
        for (&doc, vec) in &by_id {
            for &(term, impact) in vec.entries() {
                postings[term as usize].push((doc, impact));
            }
        }
        Ok(ImpactIndex {
            postings,
            doc_ids: by_id.keys().copied().collect(),
            num_terms,
        })
    }

    pub(crate) fn from_parts(postings: Vec<Vec<(u32, u8)>>, doc_ids: Vec<u32>) -> ImpactIndex {
        let num_terms = postings.len() as u32;
        ImpactIndex { postings, doc_ids, num_terms }
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn num_terms(&self) -> u32 {
        self.num_terms
    }

    pub fn doc_ids(&self) -> &[u32] {
        &self.doc_ids
    }

    pub fn postings(&self, term: u32) -> &[(u32, u8)] {
        self.postings
            .get(term as usize)
            .map(|p| p.as_slice())
            .unwrap_or(&[])
    }

    /// Total posting entries across all terms.
    pub fn num_postings(&self) -> u64 {
        self.postings.iter().map(|p| p.len() as u64).sum()
    }

    /// Rebuild the quantized vector of every indexed document.
    pub fn reconstruct(&self) -> Vec<(u32, QuantizedVector)> {
        let mut per_doc: BTreeMap<u32, Vec<(u32, u8)>> =
            self.doc_ids.iter().map(|&d| (d, Vec::new())).collect();
        for (term, list) in self.postings.iter().enumerate() {
            for &(doc, impact) in list {
                per_doc.get_mut(&doc).expect("posting for unknown doc").push((term as u32, impact));
            }
        }
        per_doc
            .into_iter()
            .map(|(doc, pairs)| (doc, QuantizedVector::from_pairs(pairs)))
            .collect()
    }

    /// Exact top-k by term-at-a-time accumulation. Scores are
    /// `sum_t q_impact(t) * d_impact(t)` over shared terms; only documents
    /// sharing at least one query term appear. Ties break toward the
    /// smaller document id.
    pub fn search(&self, query: &QuantizedVector, k: usize) -> Vec<SearchHit> {
        let mut scores: BTreeMap<u32, u64> = BTreeMap::new();
        for &(term, q_impact) in query.entries() {
            for &(doc, d_impact) in self.postings(term) {
                *scores.entry(doc).or_insert(0) += q_impact as u64 * d_impact as u64;
            }
        }
        top_k(scores.into_iter(), k)
    }
}

/// Full-scan oracle with the identical scoring and tie rule.
pub fn brute_force_search(
    docs: &[(u32, QuantizedVector)],
    query: &QuantizedVector,
    k: usize,
) -> Vec<SearchHit> {
    let scored = docs.iter().filter_map(|(id, vec)| {
        let score = query.dot(vec);
        (score > 0).then_some((*id, score))
    });
    top_k(scored, k)
}

/// Shared exact top-k selection: score descending, doc id ascending.
fn top_k(scored: impl Iterator<Item = (u32, u64)>, k: usize) -> Vec<SearchHit> {
    let mut hits: Vec<SearchHit> = scored
        .map(|(doc_id, score)| SearchHit { doc_id, score })
        .collect();
    hits.sort_by(|a, b| b.score.cmp(&a.score).then(a.doc_id.cmp(&b.doc_id)));
    hits.truncate(k);
    hits
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn qv(pairs: &[(u32, u8)]) -> QuantizedVector {
        QuantizedVector::from_pairs(pairs.iter().copied())
    }

    #[test]
    fn empty_collection_searches_empty() {
        let index = ImpactIndex::build(&[]).unwrap();
        assert_eq!(index.num_postings(), 0);
        assert!(index.search(&qv(&[(1, 10)]), 5).is_empty());
    }

    #[test]
    fn singleton_posting_list() {
        let index = ImpactIndex::build(&[(7, qv(&[(1, 43)]))]).unwrap();
        assert_eq!(index.postings(1), &[(7, 43)]);
    }

    #[test]
    fn duplicate_doc_id_rejected() {
        let docs = vec![(1, qv(&[(0, 5)])), (1, qv(&[(2, 9)]))];
        assert!(matches!(ImpactIndex::build(&docs), Err(IndexError::DuplicateDoc(1))));
    }

    #[test]
    fn disjoint_query_returns_nothing() {
        let index = ImpactIndex::build(&[(1, qv(&[(0, 5)])), (2, qv(&[(1, 5)]))]).unwrap();
        assert!(index.search(&qv(&[(9, 100)]), 10).is_empty());
    }

    #[test]
    fn hand_scored_pair() {
        let index =
            ImpactIndex::build(&[(1, qv(&[(5, 43)])), (2, qv(&[(5, 50)]))]).unwrap();
        let hits = index.search(&qv(&[(5, 100)]), 10);
        assert_eq!(
            hits,
            vec![
                SearchHit { doc_id: 2, score: 5000 },
                SearchHit { doc_id: 1, score: 4300 }
            ]
        );
    }

    #[test]
    fn ties_break_toward_smaller_doc_id() {
        let index =
            ImpactIndex::build(&[(9, qv(&[(0, 7)])), (3, qv(&[(0, 7)]))]).unwrap();
        let hits = index.search(&qv(&[(0, 2)]), 10);
        assert_eq!(hits[0].doc_id, 3);
        assert_eq!(hits[1].doc_id, 9);
        assert_eq!(hits[0].score, hits[1].score);
    }

    #[test]
    fn brute_force_singleton_and_saturation() {
        let docs = vec![(4, qv(&[(2, 10)]))];
        let hits = brute_force_search(&docs, &qv(&[(2, 3)]), 10);
        assert_eq!(hits, vec![SearchHit { doc_id: 4, score: 30 }]);
        // no shared term: empty even with k large
        assert!(brute_force_search(&docs, &qv(&[(5, 3)]), 10).is_empty());
        // k larger than matches returns all matches
        assert_eq!(brute_force_search(&docs, &qv(&[(2, 1)]), 100).len(), 1);
    }

    fn random_vector(rng: &mut ChaCha8Rng, num_terms: u32, max_nnz: usize) -> QuantizedVector {
        let nnz = rng.random_range(0..=max_nnz);
        let mut terms: Vec<u32> = (0..num_terms).collect();
        terms.shuffle(rng);
        qv(&terms[..nnz.min(terms.len())]
            .iter()
            .map(|&t| (t, rng.random_range(1..=255u8) as u8))
            .collect::<Vec<_>>())
    }

    #[test]
    fn search_matches_brute_force_on_random_collections() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let num_terms = rng.random_range(4..40u32);
            let n_docs = rng.random_range(1..60usize);
            let docs: Vec<(u32, QuantizedVector)> = (0..n_docs)
                .map(|i| (i as u32, random_vector(&mut rng, num_terms, 8)))
                .collect();
            let index = ImpactIndex::build(&docs).unwrap();
            for _ in 0..20 {
                let query = random_vector(&mut rng, num_terms, 5);
                let k = rng.random_range(1..12usize);
                assert_eq!(index.search(&query, k), brute_force_search(&docs, &query, k));
            }
        }
    }

    #[test]
    fn reconstruction_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let docs: Vec<(u32, QuantizedVector)> = (0..40)
            .map(|i| (i * 3 + 1, random_vector(&mut rng, 25, 10)))
            .collect();
        let index = ImpactIndex::build(&docs).unwrap();
        let mut sorted = docs.clone();
        sorted.sort_by_key(|(id, _)| *id);
        assert_eq!(index.reconstruct(), sorted);
    }

    #[test]
    fn sparsified_docs_never_outscore_originals() {
        use lexret_sparse::SparseLexiconVector;
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let originals: Vec<(u32, SparseLexiconVector)> = (0..30)
            .map(|i| {
                let n = rng.random_range(1..20usize);
                let pairs: Vec<(u32, f64)> =
                    (0..n).map(|j| (j as u32, rng.random_range(0.05..2.5))).collect();
                (i, SparseLexiconVector::from_pairs(pairs))
            })
            .collect();
        let full: Vec<(u32, QuantizedVector)> =
            originals.iter().map(|(i, v)| (*i, v.quantize())).collect();
        let trimmed: Vec<(u32, QuantizedVector)> =
            originals.iter().map(|(i, v)| (*i, v.topk(4).quantize())).collect();
        let full_index = ImpactIndex::build(&full).unwrap();
        let trimmed_index = ImpactIndex::build(&trimmed).unwrap();
        for _ in 0..30 {
            let query = random_vector(&mut rng, 20, 6);
            let full_hits = full_index.search(&query, 30);
            let trimmed_hits = trimmed_index.search(&query, 30);
            for hit in &trimmed_hits {
                let full_score = full_hits
                    .iter()
                    .find(|h| h.doc_id == hit.doc_id)
                    .map(|h| h.score)
                    .unwrap_or(0);
                assert!(hit.score <= full_score, "doc {}: trimmed {} > full {}", hit.doc_id, hit.score, full_score);
            }
        }
    }

    #[test]
    fn concurrent_readers_agree_with_serial() {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let docs: Vec<(u32, QuantizedVector)> = (0..50)
            .map(|i| (i, random_vector(&mut rng, 30, 8)))
            .collect();
        let index = std::sync::Arc::new(ImpactIndex::build(&docs).unwrap());
        let queries: Vec<QuantizedVector> =
            (0..40).map(|_| random_vector(&mut rng, 30, 5)).collect();
        let serial: Vec<Vec<SearchHit>> = queries.iter().map(|q| index.search(q, 10)).collect();

        let mut handles = Vec::new();
        for chunk in queries.chunks(10) {
            let index = index.clone();
            let chunk: Vec<QuantizedVector> = chunk.to_vec();
            handles.push(std::thread::spawn(move || {
                chunk.iter().map(|q| index.search(q, 10)).collect::<Vec<_>>()
            }));
        }
        let mut concurrent = Vec::new();
        for h in handles {
            concurrent.extend(h.join().unwrap());
        }
        assert_eq!(serial, concurrent);
    }
}
