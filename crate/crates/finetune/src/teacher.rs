//! Teacher scores for stage-3 distillation, ingested from a TSV file
//! (query id, doc id, score). The bundled synthetic teacher scores a
//! candidate by its smoothed token overlap with the query's positive
//! document, standing in for an off-the-shelf cross-encoder reranker.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{FinetuneError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TeacherScores {
    scores: BTreeMap<(String, String), f64>,
}

impl TeacherScores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str, score: f64) {
        self.scores.insert((query_id.to_string(), doc_id.to_string()), score);
    }

    pub fn get(&self, query_id: &str, doc_id: &str) -> Option<f64> {
        self.scores.get(&(query_id.to_string(), doc_id.to_string())).copied()
    }

    pub fn require(&self, query_id: &str, doc_id: &str) -> Result<f64> {
        self.get(query_id, doc_id).ok_or_else(|| FinetuneError::MissingTeacherScore {
            query_id: query_id.to_string(),
            doc_id: doc_id.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, String), &f64)> {
        self.scores.iter()
    }
}

pub fn read_teacher_file(path: &Path) -> Result<TeacherScores> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| FinetuneError::Io { path: path.display().to_string(), source: e })?;
    let mut out = TeacherScores::new();
    for (i, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(FinetuneError::TeacherFormat {
                path: path.display().to_string(),
                line: i + 1,
                detail: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let score: f64 = fields[2].parse().map_err(|_| FinetuneError::TeacherFormat {
            path: path.display().to_string(),
            line: i + 1,
            detail: format!("unparseable score {:?}", fields[2]),
        })?;
        out.insert(fields[0], fields[1], score);
    }
    Ok(out)
}

pub fn write_teacher_file(path: &Path, scores: &TeacherScores) -> Result<()> {
    let mut content = String::new();
    for ((qid, did), score) in scores.iter() {
        content.push_str(&format!("{qid}\t{did}\t{score}\n"));
    }
    std::fs::write(path, content)
        .map_err(|e| FinetuneError::Io { path: path.display().to_string(), source: e })
}

/// Smoothed Jaccard overlap between unique token sets.
fn smoothed_overlap(a: &[u32], b: &[u32]) -> f64 {
    let sa: BTreeSet<u32> = a.iter().copied().collect();
    let sb: BTreeSet<u32> = b.iter().copied().collect();
    let inter = sa.intersection(&sb).count() as f64;
    let union = sa.union(&sb).count() as f64;
    (inter + 0.5) / (union + 1.0)
}

/// Teacher scale: spreads the overlap signal enough that the softmax over
/// a candidate set is decisively peaked at near-duplicates of the positive.
const TEACHER_SCALE: f64 = 8.0;

/// Score every (query, candidate) pair by overlap with the query's positive
/// document. `candidates` lists, per query, the positive id followed by the
/// sampled negatives (order irrelevant, the positive just has to be there).
pub fn synthetic_teacher_scores(
    corpus: &BTreeMap<String, Vec<u32>>,
    positives: &BTreeMap<String, String>,
    candidates: &BTreeMap<String, Vec<String>>,
) -> TeacherScores {
    let mut out = TeacherScores::new();
    for (qid, docs) in candidates {
        let Some(positive_id) = positives.get(qid) else { continue };
        let Some(positive_tokens) = corpus.get(positive_id) else { continue };
        for doc_id in docs {
            let Some(doc_tokens) = corpus.get(doc_id) else { continue };
            let score = TEACHER_SCALE * smoothed_overlap(doc_tokens, positive_tokens);
            out.insert(qid, doc_id, score);
        }
    }
    out
}
