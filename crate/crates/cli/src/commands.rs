//! Subcommand implementations. Every command reads the run config,
//! validates its prerequisites, does one job, and writes versioned
//! artifacts (plus the resolved config) under the output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lexret_eval::{
    dpr_recall_at_n, marco_recall_at_n, mrr_at_k, ndcg_at_k, read_qrels_file, read_run_file,
    write_metric_report, write_run_file, Qrels, RunEntry, RunList,
};
use lexret_finetune::{
    build_negative_pools, read_teacher_file, run_stage, synthetic_teacher_scores,
    write_teacher_file, StageConfig, StageInputs,
};
use lexret_index::{load_index, save_index, Bm25Params, Bm25Stats, ImpactIndex};
use lexret_model::checkpoint::{load_checkpoint, save_checkpoint};
use lexret_model::pretrain::pretrain;
use lexret_model::repr::encode_lexicon;
use lexret_model::vocab::Vocabulary;
use lexret_model::TransformerWeights;
use lexret_sparse::{write_quantized_file, write_sparse_file, SparseLexiconVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::hashing::{artifact_tag, corpus_digest_of_tag, file_digest, fnv1a};
use crate::io::{atomic_write, read_tsv_texts, require, write_tsv_texts};
use crate::synth::{generate, qrels_to_trec};

/// Phase-specific seed derived from the run seed; keeps the phases
/// independent of each other's draw counts.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    fnv1a(format!("{seed}:{label}").as_bytes())
}

// ── Standard artifact locations ─────────────────────────────────────

pub struct Layout {
    out: PathBuf,
}

impl Layout {
    pub fn new(config: &RunConfig) -> Layout {
        Layout { out: config.paths.output_dir.clone() }
    }

    pub fn vocab(&self) -> PathBuf {
        self.out.join("vocab.txt")
    }

    pub fn pretrain_checkpoint(&self) -> PathBuf {
        self.out.join("pretrain/checkpoint.ckpt")
    }

    pub fn pretrain_log(&self) -> PathBuf {
        self.out.join("pretrain/train_log.jsonl")
    }

    pub fn stage_dir(&self, stage: u8) -> PathBuf {
        self.out.join(format!("stage{stage}"))
    }

    pub fn stage_checkpoint(&self, stage: u8) -> PathBuf {
        self.stage_dir(stage).join("checkpoint.ckpt")
    }

    pub fn phase_dir(&self, phase: &str) -> PathBuf {
        self.out.join(phase)
    }

    pub fn encode_sparse(&self) -> PathBuf {
        self.out.join("encode/vectors.sparse.txt")
    }

    pub fn encode_quantized(&self, topk: Option<usize>) -> PathBuf {
        match topk {
            Some(k) => self.out.join(format!("encode/vectors.topk{k}.quantized.txt")),
            None => self.out.join("encode/vectors.quantized.txt"),
        }
    }

    pub fn index_file(&self, topk: Option<usize>) -> PathBuf {
        match topk {
            Some(k) => self.out.join(format!("index/index-top{k}.idx")),
            None => self.out.join("index/index.idx"),
        }
    }

    pub fn search_run(&self, topk: Option<usize>) -> PathBuf {
        match topk {
            Some(k) => self.out.join(format!("search/run-top{k}.trec")),
            None => self.out.join("search/run.trec"),
        }
    }
}

fn write_resolved_config(config: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io { path: dir.display().to_string(), source: e })?;
    config.save(&dir.join("config.resolved.json"))
}

fn tag_for(config: &RunConfig) -> Result<String> {
    let digest = file_digest(&config.paths.corpus)?;
    Ok(artifact_tag(config.config_hash(), digest))
}

// ── Shared loading helpers ──────────────────────────────────────────

fn load_vocab(config: &RunConfig) -> Result<Vocabulary> {
    let layout = Layout::new(config);
    require(&layout.vocab(), "vocabulary", "build-vocab")?;
    Ok(Vocabulary::load(&layout.vocab())?)
}

fn tokenized_corpus(config: &RunConfig, vocab: &Vocabulary) -> Result<Vec<(String, Vec<u32>)>> {
    require(&config.paths.corpus, "corpus", "gen-data")?;
    let raw = read_tsv_texts(&config.paths.corpus, "document")?;
    Ok(raw.into_iter().map(|(id, text)| (id, vocab.encode(&text))).collect())
}

fn tokenized_queries(path: &Path, vocab: &Vocabulary) -> Result<Vec<(String, Vec<u32>)>> {
    let raw = read_tsv_texts(path, "query")?;
    Ok(raw.into_iter().map(|(id, text)| (id, vocab.encode(&text))).collect())
}

fn load_weights(path: &Path, artifact: &'static str, producer: &'static str) -> Result<(TransformerWeights, String)> {
    require(path, artifact, producer)?;
    Ok(load_checkpoint(path)?)
}

/// The most fine-tuned checkpoint available, stage 3 down to pretrain.
fn best_checkpoint(config: &RunConfig) -> Result<PathBuf> {
    let layout = Layout::new(config);
    for stage in [3u8, 2, 1] {
        let path = layout.stage_checkpoint(stage);
        if path.exists() {
            return Ok(path);
        }
    }
    let path = layout.pretrain_checkpoint();
    require(&path, "checkpoint", "pretrain")?;
    Ok(path)
}

// ── gen-data ────────────────────────────────────────────────────────

pub fn cmd_gen_data(config: &RunConfig) -> Result<()> {
    let data = generate(&config.synth, derive_seed(config.seed, "gen-data"));
    write_tsv_texts(&config.paths.corpus, &data.corpus)?;
    write_tsv_texts(&config.paths.train_queries, &data.train_queries)?;
    write_tsv_texts(&config.paths.dev_queries, &data.dev_queries)?;
    atomic_write(&config.paths.train_qrels, qrels_to_trec(&data.train_qrels).as_bytes())?;
    atomic_write(&config.paths.dev_qrels, qrels_to_trec(&data.dev_qrels).as_bytes())?;
    let dir = config
        .paths
        .corpus
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.paths.output_dir.clone());
    write_resolved_config(config, &dir)?;
    println!(
        "generated {} docs, {} train / {} dev queries",
        data.corpus.len(),
        data.train_queries.len(),
        data.dev_queries.len()
    );
    Ok(())
}

// ── build-vocab ─────────────────────────────────────────────────────

pub fn cmd_build_vocab(config: &RunConfig) -> Result<()> {
    require(&config.paths.corpus, "corpus", "gen-data")?;
    let raw = read_tsv_texts(&config.paths.corpus, "document")?;
    let vocab = Vocabulary::build(raw.iter().map(|(_, text)| text.as_str()), config.tokenizer.max_vocab)?;
    let layout = Layout::new(config);
    if let Some(parent) = layout.vocab().parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Io { path: parent.display().to_string(), source: e })?;
    }
    vocab
        .save(&layout.vocab())
        .map_err(|e| CliError::Io { path: layout.vocab().display().to_string(), source: e })?;
    println!("vocabulary of {} tokens", vocab.len());
    Ok(())
}

// ── pretrain ────────────────────────────────────────────────────────

pub fn cmd_pretrain(config: &RunConfig) -> Result<()> {
    let vocab = load_vocab(config)?;
    let corpus = tokenized_corpus(config, &vocab)?;
    let layout = Layout::new(config);
    let tag = tag_for(config)?;

    let mut model_config = config.model;
    model_config.vocab_size = vocab.len();
    model_config
        .validate()
        .map_err(|e| CliError::Config { detail: e.to_string() })?;

    let prepared: Vec<Vec<u32>> = corpus
        .iter()
        .map(|(_, tokens)| lexret_model::vocab::prepare_sequence(tokens, model_config.max_sequence_length))
        .collect();

    let mut weights = TransformerWeights::init(
        model_config,
        config.pretrain.decoder_lm_head,
        derive_seed(config.seed, "init"),
    );
    let mut log_lines = String::new();
    let records = pretrain(
        &mut weights,
        &prepared,
        &config.pretrain,
        derive_seed(config.seed, "pretrain"),
        |record| {
            log_lines.push_str(&serde_json::to_string(record).expect("record serializes"));
            log_lines.push('\n');
        },
    )
    .map_err(|e| match e {
        lexret_model::ModelError::TrainingDiverged { .. } => CliError::Training(e.to_string()),
        other => CliError::Model(other),
    })?;

    let dir = layout.phase_dir("pretrain");
    write_resolved_config(config, &dir)?;
    atomic_write(&layout.pretrain_log(), log_lines.as_bytes())?;
    save_checkpoint(&layout.pretrain_checkpoint(), &weights, &tag)?;
    let last = records.last().expect("at least one step");
    println!(
        "pre-trained {} steps; final loss {:.4} (encoder {:.4}, decoder {:.4})",
        records.len(),
        last.loss_total,
        last.loss_elm,
        last.loss_dlm
    );
    Ok(())
}

// ── retrieval + evaluation plumbing ─────────────────────────────────

struct EvalData {
    corpus: Vec<(String, Vec<u32>)>,
    dev_queries: Vec<(String, Vec<u32>)>,
    dev_qrels: Qrels,
}

fn load_eval_data(config: &RunConfig, vocab: &Vocabulary) -> Result<EvalData> {
    require(&config.paths.dev_queries, "dev queries", "gen-data")?;
    require(&config.paths.dev_qrels, "dev qrels", "gen-data")?;
    Ok(EvalData {
        corpus: tokenized_corpus(config, vocab)?,
        dev_queries: tokenized_queries(&config.paths.dev_queries, vocab)?,
        dev_qrels: read_qrels_file(&config.paths.dev_qrels)?,
    })
}

fn run_entries(run: &RunList, scores: &BTreeMap<(String, String), f64>) -> Vec<RunEntry> {
    let mut entries = Vec::new();
    for qid in run.queries() {
        for (i, doc) in run.ranking(qid).iter().enumerate() {
            entries.push(RunEntry {
                query_id: qid.clone(),
                doc_id: doc.clone(),
                rank: i + 1,
                score: scores.get(&(qid.clone(), doc.clone())).copied().unwrap_or(0.0),
            });
        }
    }
    entries
}

fn standard_metrics(run: &RunList, qrels: &Qrels) -> Result<Vec<(String, f64)>> {
    Ok(vec![
        ("mrr@10".to_string(), mrr_at_k(run, qrels, 10)?),
        ("ndcg@10".to_string(), ndcg_at_k(run, qrels, 10)?),
        ("marco_recall@50".to_string(), marco_recall_at_n(run, qrels, 50)?),
        ("dpr_recall@50".to_string(), dpr_recall_at_n(run, qrels, 50)?),
    ])
}

fn write_phase_eval(
    config: &RunConfig,
    phase: &str,
    run: &RunList,
    scores: &BTreeMap<(String, String), f64>,
    qrels: &Qrels,
    tag: &str,
) -> Result<Vec<(String, f64)>> {
    let layout = Layout::new(config);
    let dir = layout.phase_dir(phase);
    write_resolved_config(config, &dir)?;
    write_run_file(&dir.join("run.trec"), &run_entries(run, scores), tag)?;
    let metrics = standard_metrics(run, qrels)?;
    let meta = vec![("tag".to_string(), tag.to_string()), ("phase".to_string(), phase.to_string())];
    write_metric_report(&dir.join("metrics.txt"), &dir.join("metrics.json"), &metrics, &meta)?;
    Ok(metrics)
}

/// Encode, index and search with a frozen snapshot; returns the run and
/// each hit's score for run-file output.
fn snapshot_retrieval(
    weights: &TransformerWeights,
    corpus: &[(String, Vec<u32>)],
    queries: &[(String, Vec<u32>)],
    k: usize,
) -> Result<(RunList, BTreeMap<(String, String), f64>)> {
    let encoded = lexret_finetune::retrieval::encode_corpus(weights, corpus)?;
    let (index, table) = lexret_finetune::retrieval::build_impact_index(&encoded, None)?;
    let mut run = RunList::new();
    let mut scores = BTreeMap::new();
    for (qid, tokens) in queries {
        let query = encode_lexicon(weights, tokens)?.quantize();
        let hits = index.search(&query, k);
        let mut docs = Vec::with_capacity(hits.len());
        for hit in hits {
            let name = table.name(hit.doc_id).to_string();
            scores.insert((qid.clone(), name.clone()), hit.score as f64);
            docs.push(name);
        }
        run.set_ranking(qid, docs).map_err(lexret_finetune::FinetuneError::from)?;
    }
    Ok((run, scores))
}

// ── zero-shot ───────────────────────────────────────────────────────

/// Retrieval with the pre-trained encoder, no fine-tuning: Eq-style
/// saturated representations straight from the masked-LM checkpoint.
pub fn cmd_zero_shot(config: &RunConfig) -> Result<Vec<(String, f64)>> {
    let vocab = load_vocab(config)?;
    let data = load_eval_data(config, &vocab)?;
    let layout = Layout::new(config);
    let (weights, tag) =
        load_weights(&layout.pretrain_checkpoint(), "pre-trained checkpoint", "pretrain")?;
    let (run, scores) = snapshot_retrieval(&weights, &data.corpus, &data.dev_queries, config.search_k)?;
    write_phase_eval(config, "zero_shot", &run, &scores, &data.dev_qrels, &tag)
}

// ── bm25 baseline ───────────────────────────────────────────────────

pub fn cmd_bm25(config: &RunConfig) -> Result<Vec<(String, f64)>> {
    let vocab = load_vocab(config)?;
    let data = load_eval_data(config, &vocab)?;
    let tag = tag_for(config)?;
    let ordinals: Vec<(u32, Vec<u32>)> = data
        .corpus
        .iter()
        .enumerate()
        .map(|(i, (_, tokens))| (i as u32, tokens.clone()))
        .collect();
    let stats = Bm25Stats::build(&ordinals, Bm25Params::default());
    let mut run = RunList::new();
    let mut scores = BTreeMap::new();
    for (qid, tokens) in &data.dev_queries {
        let hits = stats.search(tokens, config.search_k);
        let mut docs = Vec::with_capacity(hits.len());
        for hit in hits {
            let name = data.corpus[hit.doc_id as usize].0.clone();
            scores.insert((qid.clone(), name.clone()), hit.score);
            docs.push(name);
        }
        run.set_ranking(qid, docs)?;
    }
    write_phase_eval(config, "bm25", &run, &scores, &data.dev_qrels, &tag)
}

// ── finetune ────────────────────────────────────────────────────────

fn stage_config(config: &RunConfig, stage: u8) -> StageConfig {
    match stage {
        1 => config.stage1,
        2 => config.stage2,
        _ => config.stage3,
    }
}

pub fn cmd_finetune(config: &RunConfig, stage: u8) -> Result<Vec<(String, f64)>> {
    if !(1..=3).contains(&stage) {
        return Err(CliError::Config { detail: format!("stage {stage} is not one of 1, 2, 3") });
    }
    let vocab = load_vocab(config)?;
    let layout = Layout::new(config);
    let init_path = match stage {
        1 => layout.pretrain_checkpoint(),
        n => layout.stage_checkpoint(n - 1),
    };
    let producer: &'static str = match stage {
        1 => "pretrain",
        2 => "finetune --stage 1",
        _ => "finetune --stage 2",
    };
    let (mut weights, _) = load_weights(&init_path, "initial checkpoint", producer)?;

    require(&config.paths.train_queries, "train queries", "gen-data")?;
    require(&config.paths.train_qrels, "train qrels", "gen-data")?;
    let corpus = tokenized_corpus(config, &vocab)?;
    let train_queries = tokenized_queries(&config.paths.train_queries, &vocab)?;
    let train_qrels = read_qrels_file(&config.paths.train_qrels)?;
    let data = load_eval_data(config, &vocab)?;

    let teacher = if stage == 3 {
        require(&config.paths.teacher_scores, "teacher scores", "teacher")?;
        Some(read_teacher_file(&config.paths.teacher_scores)?)
    } else {
        None
    };

    let inputs = StageInputs {
        corpus: &corpus,
        train_queries: &train_queries,
        train_qrels: &train_qrels,
        eval_queries: &data.dev_queries,
        eval_qrels: &data.dev_qrels,
    };
    let cfg = stage_config(config, stage);
    let report = run_stage(
        &mut weights,
        &inputs,
        &cfg,
        teacher.as_ref(),
        derive_seed(config.seed, &format!("stage{stage}")),
    )?;

    let tag = tag_for(config)?;
    let dir = layout.stage_dir(stage);
    write_resolved_config(config, &dir)?;
    save_checkpoint(&layout.stage_checkpoint(stage), &weights, &tag)?;
    let mut log_lines = String::new();
    for record in &report.records {
        log_lines.push_str(&serde_json::to_string(record).expect("record serializes"));
        log_lines.push('\n');
    }
    atomic_write(&dir.join("records.jsonl"), log_lines.as_bytes())?;

    // Held-out retrieval with the trained stage checkpoint.
    let (run, scores) = snapshot_retrieval(&weights, &corpus, &data.dev_queries, config.search_k)?;
    let metrics = write_phase_eval(config, &format!("stage{stage}"), &run, &scores, &data.dev_qrels, &tag)?;
    println!(
        "stage {stage}: {} groups, {} steps, backfilled {}; dev mrr@10 {:.4}",
        report.groups,
        report.steps,
        report.backfilled_negatives,
        metrics[0].1
    );
    Ok(metrics)
}

// ── teacher ─────────────────────────────────────────────────────────

/// Produce the stage-3 teacher score file with the bundled synthetic
/// scorer. Mines the stage-3 candidate pools with the stage-2 snapshot
/// (the same derivation stage 3 itself uses) so every needed
/// (query, candidate) pair is covered.
pub fn cmd_teacher(config: &RunConfig) -> Result<()> {
    let vocab = load_vocab(config)?;
    let layout = Layout::new(config);
    let (weights, _) = load_weights(
        &layout.stage_checkpoint(2),
        "stage-2 checkpoint",
        "finetune --stage 2",
    )?;
    let corpus = tokenized_corpus(config, &vocab)?;
    let train_queries = tokenized_queries(&config.paths.train_queries, &vocab)?;
    let train_qrels = read_qrels_file(&config.paths.train_qrels)?;
    let data = load_eval_data(config, &vocab)?;

    let inputs = StageInputs {
        corpus: &corpus,
        train_queries: &train_queries,
        train_qrels: &train_qrels,
        eval_queries: &data.dev_queries,
        eval_qrels: &data.dev_qrels,
    };
    let cfg = stage_config(config, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "stage3"));
    let (pools, _) = build_negative_pools(&weights, &inputs, &cfg, &mut rng)?;

    let corpus_map: BTreeMap<String, Vec<u32>> = corpus.iter().cloned().collect();
    let mut positives = BTreeMap::new();
    let mut candidates = BTreeMap::new();
    for (qid, _) in &train_queries {
        let pos = train_qrels.positives(qid);
        let Some(primary) = pos
            .iter()
            .max_by(|a, b| {
                train_qrels
                    .grade(qid, a)
                    .cmp(&train_qrels.grade(qid, b))
                    .then(b.cmp(a))
            })
        else {
            continue;
        };
        let mut docs = vec![primary.to_string()];
        if let Some(pool) = pools.get(qid) {
            docs.extend(pool.iter().cloned());
        }
        positives.insert(qid.clone(), primary.to_string());
        candidates.insert(qid.clone(), docs);
    }
    let scores = synthetic_teacher_scores(&corpus_map, &positives, &candidates);
    if let Some(parent) = config.paths.teacher_scores.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Io { path: parent.display().to_string(), source: e })?;
    }
    write_teacher_file(&config.paths.teacher_scores, &scores)?;
    println!("teacher scores for {} (query, doc) pairs", scores.len());
    Ok(())
}

// ── encode ──────────────────────────────────────────────────────────

pub struct EncodeSummary {
    /// Model inference calls performed; one per document regardless of how
    /// many sparsification levels were requested.
    pub inference_calls: usize,
    pub mean_nnz: f64,
}

/// Encode the corpus once and derive every requested top-K variant from
/// the same full representations.
pub fn cmd_encode(config: &RunConfig, topk_list: &[usize], checkpoint: Option<&Path>) -> Result<EncodeSummary> {
    let vocab = load_vocab(config)?;
    let corpus = tokenized_corpus(config, &vocab)?;
    let layout = Layout::new(config);
    let ckpt_path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => best_checkpoint(config)?,
    };
    let (weights, tag) = load_weights(&ckpt_path, "checkpoint", "pretrain")?;

    let mut inference_calls = 0usize;
    let mut encoded: Vec<(String, SparseLexiconVector)> = Vec::with_capacity(corpus.len());
    for (id, tokens) in &corpus {
        encoded.push((id.clone(), encode_lexicon(&weights, tokens)?));
        inference_calls += 1;
    }
    let mean_nnz =
        encoded.iter().map(|(_, v)| v.nnz() as f64).sum::<f64>() / encoded.len().max(1) as f64;

    let dir = layout.phase_dir("encode");
    write_resolved_config(config, &dir)?;
    let meta = vec![
        ("tag".to_string(), tag.clone()),
        ("inference_calls".to_string(), inference_calls.to_string()),
    ];
    write_sparse_file(&layout.encode_sparse(), &meta, &encoded)?;

    let full: Vec<(String, lexret_sparse::QuantizedVector)> =
        encoded.iter().map(|(id, v)| (id.clone(), v.quantize())).collect();
    write_quantized_file(&layout.encode_quantized(None), &meta, &full)?;
    for &k in topk_list {
        let trimmed: Vec<(String, lexret_sparse::QuantizedVector)> = encoded
            .iter()
            .map(|(id, v)| (id.clone(), v.topk(k).quantize()))
            .collect();
        write_quantized_file(&layout.encode_quantized(Some(k)), &meta, &trimmed)?;
    }
    println!(
        "encoded {} docs once each ({} inference calls), mean nnz {:.1}, {} sparsify levels",
        corpus.len(),
        inference_calls,
        mean_nnz,
        topk_list.len()
    );
    Ok(EncodeSummary { inference_calls, mean_nnz })
}

// ── index ───────────────────────────────────────────────────────────

pub fn cmd_index(config: &RunConfig, topk: Option<usize>) -> Result<u64> {
    let layout = Layout::new(config);
    let vectors_path = layout.encode_quantized(topk);
    require(&vectors_path, "quantized vectors", "encode")?;
    let (meta, records) = lexret_sparse::read_quantized_file(&vectors_path)?;
    let tag = meta
        .iter()
        .find(|(k, _)| k == "tag")
        .map(|(_, v)| v.clone())
        .unwrap_or_else(|| tag_for(config).unwrap_or_default());

    // Ordinals follow record order; the doc-name table rides along in a
    // sidecar so `search` can translate back.
    let docs: Vec<(u32, lexret_sparse::QuantizedVector)> = records
        .iter()
        .enumerate()
        .map(|(i, (_, v))| (i as u32, v.clone()))
        .collect();
    let index = ImpactIndex::build(&docs)?;
    let dir = layout.phase_dir("index");
    write_resolved_config(config, &dir)?;
    let index_path = layout.index_file(topk);
    save_index(&index_path, &index, &tag)?;
    let names: Vec<String> = records.iter().map(|(id, _)| id.clone()).collect();
    atomic_write(&index_path.with_extension("docs"), (names.join("\n") + "\n").as_bytes())?;

    let size = std::fs::metadata(&index_path)
        .map_err(|e| CliError::Io { path: index_path.display().to_string(), source: e })?
        .len();
    println!(
        "indexed {} docs, {} postings, {} bytes",
        index.num_docs(),
        index.num_postings(),
        size
    );
    Ok(size)
}

// ── search ──────────────────────────────────────────────────────────

pub fn cmd_search(config: &RunConfig, k: usize, topk: Option<usize>, checkpoint: Option<&Path>) -> Result<()> {
    let vocab = load_vocab(config)?;
    let layout = Layout::new(config);
    let index_path = layout.index_file(topk);
    require(&index_path, "index", "index")?;
    let (index, tag) = load_index(&index_path)?;
    let names_path = index_path.with_extension("docs");
    require(&names_path, "document table", "index")?;
    let names: Vec<String> = std::fs::read_to_string(&names_path)
        .map_err(|e| CliError::Io { path: names_path.display().to_string(), source: e })?
        .lines()
        .map(str::to_string)
        .collect();

    let ckpt_path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => best_checkpoint(config)?,
    };
    let (weights, ckpt_tag) = load_weights(&ckpt_path, "checkpoint", "pretrain")?;
    if ckpt_tag != tag {
        return Err(CliError::Mismatch {
            detail: format!(
                "index was built under tag {tag} but the checkpoint carries {ckpt_tag}; \
                 re-run `lexret encode` and `lexret index` with this checkpoint"
            ),
        });
    }

    require(&config.paths.dev_queries, "dev queries", "gen-data")?;
    let queries = tokenized_queries(&config.paths.dev_queries, &vocab)?;
    let mut entries = Vec::new();
    for (qid, tokens) in &queries {
        // Queries are never sparsified; only documents pass through top-K.
        let query = encode_lexicon(&weights, tokens)?.quantize();
        for (rank, hit) in index.search(&query, k).iter().enumerate() {
            entries.push(RunEntry {
                query_id: qid.clone(),
                doc_id: names[hit.doc_id as usize].clone(),
                rank: rank + 1,
                score: hit.score as f64,
            });
        }
    }
    let dir = layout.phase_dir("search");
    write_resolved_config(config, &dir)?;
    write_run_file(&layout.search_run(topk), &entries, &tag)?;
    println!("wrote {} run entries for {} queries", entries.len(), queries.len());
    Ok(())
}

// ── eval ────────────────────────────────────────────────────────────

/// Evaluate one or more run files against the dev qrels. Runs must all
/// come from the same corpus (checked via the tag digests).
pub fn cmd_eval(config: &RunConfig, runs: &[PathBuf]) -> Result<Vec<(String, Vec<(String, f64)>)>> {
    if runs.is_empty() {
        return Err(CliError::Config { detail: "eval needs at least one run file".into() });
    }
    require(&config.paths.dev_qrels, "dev qrels", "gen-data")?;
    let qrels = read_qrels_file(&config.paths.dev_qrels)?;

    let mut digests: Vec<(String, Option<u64>)> = Vec::new();
    let mut all = Vec::new();
    for path in runs {
        require(path, "run file", "search")?;
        let (run, tag) = read_run_file(path)?;
        let digest = tag.as_deref().and_then(corpus_digest_of_tag);
        digests.push((path.display().to_string(), digest));
        let metrics = standard_metrics(&run, &qrels)?;
        all.push((path.display().to_string(), metrics));
    }
    let first = digests[0].1;
    for (name, digest) in &digests[1..] {
        if *digest != first {
            return Err(CliError::Mismatch {
                detail: format!(
                    "run files come from different corpora: {} vs {} (corpus digests {:?} vs {:?})",
                    digests[0].0, name, first, digest
                ),
            });
        }
    }

    let layout = Layout::new(config);
    let dir = layout.phase_dir("eval");
    write_resolved_config(config, &dir)?;
    let mut flat = Vec::new();
    for (name, metrics) in &all {
        for (metric, value) in metrics {
            flat.push((format!("{name}:{metric}"), *value));
        }
    }
    let meta = vec![("qrels".to_string(), config.paths.dev_qrels.display().to_string())];
    write_metric_report(&dir.join("metrics.txt"), &dir.join("metrics.json"), &flat, &meta)?;
    for (name, metrics) in &all {
        for (metric, value) in metrics {
            println!("{name} {metric} {value:.4}");
        }
    }
    Ok(all)
}

// ── pipeline ────────────────────────────────────────────────────────

#[derive(Debug, serde::Serialize)]
pub struct PipelineSummary {
    pub phases: Vec<(String, Vec<(String, f64)>)>,
}

/// The whole chain on one dataset: data, vocabulary, pre-training, BM25
/// and zero-shot baselines, then the three fine-tuning stages with the
/// teacher file generated in between.
pub fn cmd_pipeline(config: &RunConfig) -> Result<PipelineSummary> {
    if !config.paths.corpus.exists() {
        cmd_gen_data(config)?;
    }
    cmd_build_vocab(config)?;
    cmd_pretrain(config)?;
    let mut phases = Vec::new();
    phases.push(("bm25".to_string(), cmd_bm25(config)?));
    phases.push(("zero_shot".to_string(), cmd_zero_shot(config)?));
    phases.push(("stage1".to_string(), cmd_finetune(config, 1)?));
    phases.push(("stage2".to_string(), cmd_finetune(config, 2)?));
    cmd_teacher(config)?;
    phases.push(("stage3".to_string(), cmd_finetune(config, 3)?));

    let summary = PipelineSummary { phases };
    let path = config.paths.output_dir.join("pipeline_summary.json");
    atomic_write(
        &path,
        (serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n").as_bytes(),
    )?;
    for (phase, metrics) in &summary.phases {
        let mrr = metrics
            .iter()
            .find(|(name, _)| name == "mrr@10")
            .map(|(_, v)| *v)
            .unwrap_or(f64::NAN);
        println!("{phase}: dev mrr@10 {mrr:.4}");
    }
    Ok(summary)
}
