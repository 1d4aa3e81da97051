use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("run query {0:?} is missing from the qrels")]
    QueryNotJudged(String),

    #[error("duplicate document {doc:?} in the run for query {query:?}")]
    DuplicateDoc { query: String, doc: String },
}

/// Relevance judgments: query id -> (doc id -> grade >= 0).
/// Positives are grade >= 1.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: &str, doc: &str, grade: u32) {
        self.judgments
            .entry(query.to_string())
            .or_default()
            .insert(doc.to_string(), grade);
    }

    pub fn grade(&self, query: &str, doc: &str) -> u32 {
        self.judgments
            .get(query)
            .and_then(|m| m.get(doc))
            .copied()
            .unwrap_or(0)
    }

    pub fn contains_query(&self, query: &str) -> bool {
        self.judgments.contains_key(query)
    }

    pub fn queries(&self) -> impl Iterator<Item = &String> {
        self.judgments.keys()
    }

    pub fn num_queries(&self) -> usize {
        self.judgments.len()
    }

    /// Doc ids judged positive (grade >= 1) for a query, in id order.
    pub fn positives(&self, query: &str) -> Vec<&String> {
        self.judgments
            .get(query)
            .map(|m| m.iter().filter(|(_, g)| **g >= 1).map(|(d, _)| d).collect())
            .unwrap_or_default()
    }

    pub fn grades(&self, query: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query)
    }
}

/// Ranked document lists per query. No duplicates within a query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunList {
    rankings: BTreeMap<String, Vec<String>>,
}

impl RunList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_ranking(&mut self, query: &str, docs: Vec<String>) -> Result<(), EvalError> {
        let mut seen = std::collections::BTreeSet::new();
        for d in &docs {
            if !seen.insert(d.clone()) {
                return Err(EvalError::DuplicateDoc { query: query.to_string(), doc: d.clone() });
            }
        }
        self.rankings.insert(query.to_string(), docs);
        Ok(())
    }

    pub fn ranking(&self, query: &str) -> &[String] {
        self.rankings.get(query).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn queries(&self) -> impl Iterator<Item = &String> {
        self.rankings.keys()
    }
}

/// Every query in the run must be judged; queries judged but absent from
/// the run contribute zero. The mean runs over the qrels queries.
fn check_coverage(run: &RunList, qrels: &Qrels) -> Result<(), EvalError> {
    for q in run.queries() {
        if !qrels.contains_query(q) {
            return Err(EvalError::QueryNotJudged(q.clone()));
        }
    }
    Ok(())
}

fn mean_over_queries(
    run: &RunList,
    qrels: &Qrels,
    per_query: impl Fn(&str, &[String]) -> f64,
) -> Result<f64, EvalError> {
    check_coverage(run, qrels)?;
    if qrels.num_queries() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for q in qrels.queries() {
        total += per_query(q, run.ranking(q));
    }
    Ok(total / qrels.num_queries() as f64)
}

/// Mean over queries of 1/rank of the first positive within the top k,
/// zero when no positive appears.
pub fn mrr_at_k(run: &RunList, qrels: &Qrels, k: usize) -> Result<f64, EvalError> {
    mean_over_queries(run, qrels, |q, docs| {
        for (i, d) in docs.iter().take(k).enumerate() {
            if qrels.grade(q, d) >= 1 {
                return 1.0 / (i + 1) as f64;
            }
        }
        0.0
    })
}

/// All-positive-macro recall: hits within top n divided by min(n, positives).
pub fn marco_recall_at_n(run: &RunList, qrels: &Qrels, n: usize) -> Result<f64, EvalError> {
    mean_over_queries(run, qrels, |q, docs| {
        let positives = qrels.positives(q);
        if positives.is_empty() {
            return 0.0;
        }
        let hits = docs.iter().take(n).filter(|d| qrels.grade(q, d) >= 1).count();
        hits as f64 / n.min(positives.len()) as f64
    })
}

/// One-positive-enough recall: indicator that any positive appears in top n.
pub fn dpr_recall_at_n(run: &RunList, qrels: &Qrels, n: usize) -> Result<f64, EvalError> {
    mean_over_queries(run, qrels, |q, docs| {
        let hit = docs.iter().take(n).any(|d| qrels.grade(q, d) >= 1);
        if hit {
            1.0
        } else {
            0.0
        }
    })
}

/// Graded nDCG with gain 2^grade - 1 and log2 rank discount; the ideal DCG
/// sorts the query's grades descending. All-zero-grade queries contribute 0.
pub fn ndcg_at_k(run: &RunList, qrels: &Qrels, k: usize) -> Result<f64, EvalError> {
    mean_over_queries(run, qrels, |q, docs| {
        let Some(grades) = qrels.grades(q) else { return 0.0 };
        let mut ideal: Vec<u32> = grades.values().copied().filter(|g| *g > 0).collect();
        if ideal.is_empty() {
            return 0.0;
        }
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, g)| gain(*g) / discount(i))
            .sum();
        let dcg: f64 = docs
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, d)| gain(qrels.grade(q, d)) / discount(i))
            .sum();
        dcg / idcg
    })
}

fn gain(grade: u32) -> f64 {
    (2f64).powi(grade as i32) - 1.0
}

fn discount(rank0: usize) -> f64 {
    ((rank0 + 2) as f64).log2()
}
