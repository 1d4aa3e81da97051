//! Bundled synthetic retrieval dataset: documents drawn from a
//! topic-mixture vocabulary model plus a few document-specific entity
//! words, queries as noisy keyword extracts of their positive documents,
//! graded qrels. Topic words are statistically interchangeable, so context
//! alone cannot tell same-topic documents apart; the entity mentions are
//! the identity signal a lexicon-weighting encoder has to surface, and the
//! query noise swaps topic words for same-topic words absent from the
//! positive, leaving room for learned expansion to beat exact match.

use std::collections::BTreeSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_docs: usize,
    pub num_queries: usize,
    pub num_topics: usize,
    pub words_per_topic: usize,
    pub common_words: usize,
    /// Pool of entity words; each document mentions a few, so one entity
    /// appears in only a handful of documents.
    pub entity_pool: usize,
    pub entities_per_doc: usize,
    /// Repetitions of each entity inside its document.
    pub entity_mentions: usize,
    /// Entity words sampled into each query from its positive document.
    pub query_entity_words: usize,
    pub doc_len_min: usize,
    pub doc_len_max: usize,
    pub query_len_min: usize,
    pub query_len_max: usize,
    /// Probability that a document position draws from its topic rather
    /// than the common pool.
    pub topic_word_prob: f64,
    /// Probability that one query word is swapped for a same-topic word
    /// absent from the positive document.
    pub mismatch_prob: f64,
    /// Fraction of queries receiving an extra grade-1 positive: the
    /// same-topic document with the highest overlap with the primary one.
    pub extra_positive_fraction: f64,
    /// Fraction of queries held out as the dev split.
    pub dev_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_docs: 1000,
            num_queries: 200,
            num_topics: 12,
            words_per_topic: 30,
            common_words: 40,
            entity_pool: 500,
            entities_per_doc: 3,
            entity_mentions: 2,
            query_entity_words: 2,
            doc_len_min: 12,
            doc_len_max: 24,
            query_len_min: 2,
            query_len_max: 3,
            topic_word_prob: 0.7,
            mismatch_prob: 0.5,
            extra_positive_fraction: 0.3,
            dev_fraction: 0.25,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.num_queries > self.num_docs {
            return Err("more queries than documents: positives are drawn without replacement".into());
        }
        if self.num_topics == 0 || self.words_per_topic < 4 {
            return Err("need at least one topic with a few words".into());
        }
        if self.entities_per_doc > 0 && self.entity_pool < self.entities_per_doc {
            return Err("entity pool smaller than entities per document".into());
        }
        if self.query_entity_words > self.entities_per_doc {
            return Err("queries cannot cite more entities than documents carry".into());
        }
        if self.doc_len_min < self.query_len_max || self.doc_len_max < self.doc_len_min {
            return Err("document length range must cover the query length".into());
        }
        if self.query_len_min == 0 || self.query_len_max < self.query_len_min {
            return Err("invalid query length range".into());
        }
        for p in [
            self.topic_word_prob,
            self.mismatch_prob,
            self.extra_positive_fraction,
            self.dev_fraction,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("probability {p} outside [0, 1]"));
            }
        }
        if (self.num_queries as f64 * self.dev_fraction) < 1.0 {
            return Err("dev split would be empty".into());
        }
        Ok(())
    }
}

pub struct SynthDataset {
    /// (doc id, text)
    pub corpus: Vec<(String, String)>,
    pub train_queries: Vec<(String, String)>,
    /// (query id, doc id, grade)
    pub train_qrels: Vec<(String, String, u32)>,
    pub dev_queries: Vec<(String, String)>,
    pub dev_qrels: Vec<(String, String, u32)>,
}

fn topic_word(topic: usize, word: usize) -> String {
    format!("t{topic:02}w{word:02}")
}

fn common_word(word: usize) -> String {
    format!("c{word:03}")
}

fn entity_word(entity: usize) -> String {
    format!("e{entity:04}")
}

/// Zipf-ish rank sampling: weight 1/(rank+1).
fn zipf_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let weights: f64 = (0..n).map(|i| 1.0 / (i + 1) as f64).sum();
    let mut draw = rng.random::<f64>() * weights;
    for i in 0..n {
        draw -= 1.0 / (i + 1) as f64;
        if draw <= 0.0 {
            return i;
        }
    }
    n - 1
}

pub fn generate(cfg: &SynthConfig, seed: u64) -> SynthDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Documents: one topic each, Zipf-weighted topic words mixed with
    // common words, plus a few entity mentions that identify the document
    // within its topic.
    let mut corpus = Vec::with_capacity(cfg.num_docs);
    let mut doc_topics = Vec::with_capacity(cfg.num_docs);
    let mut doc_tokens: Vec<Vec<String>> = Vec::with_capacity(cfg.num_docs);
    let mut doc_entities: Vec<Vec<String>> = Vec::with_capacity(cfg.num_docs);
    for d in 0..cfg.num_docs {
        let topic = rng.random_range(0..cfg.num_topics);
        let len = rng.random_range(cfg.doc_len_min..=cfg.doc_len_max);
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            if rng.random::<f64>() < cfg.topic_word_prob {
                words.push(topic_word(topic, zipf_index(&mut rng, cfg.words_per_topic)));
            } else {
                words.push(common_word(zipf_index(&mut rng, cfg.common_words)));
            }
        }
        let mut entities = Vec::with_capacity(cfg.entities_per_doc);
        if cfg.entities_per_doc > 0 {
            let mut pool: Vec<usize> = (0..cfg.entity_pool).collect();
            for _ in 0..cfg.entities_per_doc {
                let i = rng.random_range(0..pool.len());
                entities.push(entity_word(pool.swap_remove(i)));
            }
            for entity in &entities {
                for _ in 0..cfg.entity_mentions {
                    let at = rng.random_range(0..=words.len());
                    words.insert(at, entity.clone());
                }
            }
        }
        doc_topics.push(topic);
        doc_entities.push(entities);
        corpus.push((format!("D{d:04}"), words.join(" ")));
        doc_tokens.push(words);
    }

    // Queries: noisy keyword extracts of distinct positive documents.
    let mut positive_docs: Vec<usize> = (0..cfg.num_docs).collect();
    positive_docs.shuffle(&mut rng);
    positive_docs.truncate(cfg.num_queries);

    let mut queries = Vec::with_capacity(cfg.num_queries);
    let mut qrels: Vec<(String, String, u32)> = Vec::new();
    for (q, &doc) in positive_docs.iter().enumerate() {
        let qid = format!("Q{q:04}");
        let topic = doc_topics[doc];
        let salient: Vec<&String> = {
            let unique: BTreeSet<&String> = doc_tokens[doc]
                .iter()
                .filter(|w| w.starts_with('t'))
                .collect();
            unique.into_iter().collect()
        };
        let want = rng.random_range(cfg.query_len_min..=cfg.query_len_max);
        let mut words: Vec<String> = if salient.is_empty() {
            // All-common document: fall back to its common words.
            vec![doc_tokens[doc][0].clone()]
        } else {
            let mut pool: Vec<&String> = salient.clone();
            let mut chosen = Vec::new();
            for _ in 0..want.min(pool.len()) {
                let i = rng.random_range(0..pool.len());
                chosen.push(pool.swap_remove(i).clone());
            }
            chosen
        };
        if rng.random::<f64>() < cfg.mismatch_prob {
            // Swap one topic word for a same-topic word the document lacks.
            let present: BTreeSet<&String> = doc_tokens[doc].iter().collect();
            let absent: Vec<String> = (0..cfg.words_per_topic)
                .map(|w| topic_word(topic, w))
                .filter(|w| !present.contains(w))
                .collect();
            if !absent.is_empty() {
                let victim = rng.random_range(0..words.len());
                words[victim] = absent[rng.random_range(0..absent.len())].clone();
            }
        }
        // The identifying part: entity mentions lifted from the positive.
        if !doc_entities[doc].is_empty() {
            let mut pool = doc_entities[doc].clone();
            for _ in 0..cfg.query_entity_words.min(pool.len()) {
                let i = rng.random_range(0..pool.len());
                words.push(pool.swap_remove(i));
            }
        }
        queries.push((qid.clone(), words.join(" ")));
        qrels.push((qid.clone(), corpus[doc].0.clone(), 2));

        if rng.random::<f64>() < cfg.extra_positive_fraction {
            // Grade-1 positive: the same-topic doc most similar to the
            // primary positive.
            let target: BTreeSet<&String> = doc_tokens[doc].iter().collect();
            let best = (0..cfg.num_docs)
                .filter(|&d| d != doc && doc_topics[d] == topic)
                .max_by_key(|&d| {
                    let overlap =
                        doc_tokens[d].iter().filter(|w| target.contains(w)).collect::<BTreeSet<_>>();
                    (overlap.len(), std::cmp::Reverse(d))
                });
            if let Some(extra) = best {
                qrels.push((qid.clone(), corpus[extra].0.clone(), 1));
            }
        }
    }

    // Held-out split: the tail of the query list.
    let dev_count = ((cfg.num_queries as f64) * cfg.dev_fraction).round() as usize;
    let train_count = cfg.num_queries - dev_count;
    let (train_queries, dev_queries) = {
        let mut qs = queries;
        let dev = qs.split_off(train_count);
        (qs, dev)
    };
    let train_ids: BTreeSet<&String> = train_queries.iter().map(|(id, _)| id).collect();
    let (train_qrels, dev_qrels): (Vec<_>, Vec<_>) =
        qrels.into_iter().partition(|(qid, _, _)| train_ids.contains(qid));

    SynthDataset { corpus, train_queries, train_qrels, dev_queries, dev_qrels }
}

pub fn qrels_to_trec(entries: &[(String, String, u32)]) -> String {
    let mut out = String::new();
    for (qid, did, grade) in entries {
        out.push_str(&format!("{qid} 0 {did} {grade}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_docs: 60,
            num_queries: 20,
            num_topics: 5,
            words_per_topic: 12,
            common_words: 20,
            entity_pool: 40,
            entities_per_doc: 2,
            query_entity_words: 1,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small(), 42);
        let b = generate(&small(), 42);
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.train_queries, b.train_queries);
        assert_eq!(a.dev_qrels, b.dev_qrels);
    }

    #[test]
    fn shapes_and_split() {
        let cfg = small();
        let data = generate(&cfg, 7);
        assert_eq!(data.corpus.len(), 60);
        assert_eq!(data.train_queries.len() + data.dev_queries.len(), 20);
        assert_eq!(data.dev_queries.len(), 5); // 25% of 20
        assert!(!data.train_qrels.is_empty() && !data.dev_qrels.is_empty());
    }

    #[test]
    fn every_query_has_a_grade_two_positive_in_the_corpus() {
        let data = generate(&small(), 9);
        let doc_ids: BTreeSet<&String> = data.corpus.iter().map(|(id, _)| id).collect();
        for (qid, _) in data.train_queries.iter().chain(&data.dev_queries) {
            let primary = data
                .train_qrels
                .iter()
                .chain(&data.dev_qrels)
                .find(|(q, _, g)| q == qid && *g == 2)
                .unwrap_or_else(|| panic!("{qid} lacks a primary positive"));
            assert!(doc_ids.contains(&primary.1));
        }
    }

    #[test]
    fn distinct_primary_positives() {
        let data = generate(&small(), 11);
        let primaries: Vec<&String> = data
            .train_qrels
            .iter()
            .chain(&data.dev_qrels)
            .filter(|(_, _, g)| *g == 2)
            .map(|(_, d, _)| d)
            .collect();
        let unique: BTreeSet<_> = primaries.iter().collect();
        assert_eq!(unique.len(), primaries.len());
    }

    #[test]
    fn seeds_change_the_data() {
        let a = generate(&small(), 1);
        let b = generate(&small(), 2);
        assert_ne!(a.corpus, b.corpus);
    }
}
