//! Glue between the encoder and the impact index: corpus encoding, index
//! construction over string document ids, and run-list retrieval.

use std::collections::BTreeMap;

use lexret_eval::RunList;
use lexret_index::ImpactIndex;
use lexret_model::repr::encode_lexicon;
use lexret_model::TransformerWeights;
use lexret_sparse::{QuantizedVector, SparseLexiconVector};

use crate::error::Result;

/// Encode every document with a frozen snapshot. Ordering follows the
/// input slice; documents that encode to nothing stay as empty vectors.
pub fn encode_corpus(
    weights: &TransformerWeights,
    corpus: &[(String, Vec<u32>)],
) -> Result<Vec<(String, SparseLexiconVector)>> {
    corpus
        .iter()
        .map(|(id, tokens)| Ok((id.clone(), encode_lexicon(weights, tokens)?)))
        .collect()
}

/// Maps between external string ids and the dense u32 ids the index uses.
pub struct DocTable {
    ids: Vec<String>,
    lookup: BTreeMap<String, u32>,
}

impl DocTable {
    pub fn new(ids: impl IntoIterator<Item = String>) -> DocTable {
        let ids: Vec<String> = ids.into_iter().collect();
        let lookup = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        DocTable { ids, lookup }
    }

    pub fn name(&self, ordinal: u32) -> &str {
        &self.ids[ordinal as usize]
    }

    pub fn ordinal(&self, name: &str) -> Option<u32> {
        self.lookup.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Quantize (optionally after top-k truncation) and build the index.
pub fn build_impact_index(
    encoded: &[(String, SparseLexiconVector)],
    topk: Option<usize>,
) -> Result<(ImpactIndex, DocTable)> {
    let table = DocTable::new(encoded.iter().map(|(id, _)| id.clone()));
    let docs: Vec<(u32, QuantizedVector)> = encoded
        .iter()
        .map(|(id, vec)| {
            let trimmed = match topk {
                Some(k) => vec.topk(k),
                None => vec.clone(),
            };
            (table.ordinal(id).expect("id from the same table"), trimmed.quantize())
        })
        .collect();
    let index = ImpactIndex::build(&docs)?;
    Ok((index, table))
}

/// Retrieve top-k documents for every query; queries and documents pass
/// through the identical encode-quantize path.
pub fn retrieve(
    weights: &TransformerWeights,
    index: &ImpactIndex,
    table: &DocTable,
    queries: &[(String, Vec<u32>)],
    k: usize,
) -> Result<RunList> {
    let mut run = RunList::new();
    for (qid, tokens) in queries {
        let query = encode_lexicon(weights, tokens)?.quantize();
        let hits = index.search(&query, k);
        let docs: Vec<String> = hits.iter().map(|h| table.name(h.doc_id).to_string()).collect();
        run.set_ranking(qid, docs)?;
    }
    Ok(run)
}
