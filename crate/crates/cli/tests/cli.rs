//! End-to-end subcommand behavior through the real binary: artifact
//! determinism, prerequisite ordering, and the sparsify contract.

use std::path::{Path, PathBuf};
use std::process::Command;

use lexret_cli::{RunConfig, TokenizerConfig};
use lexret_finetune::StageConfig;
use lexret_model::pretrain::PretrainConfig;
use lexret_model::ModelConfig;
use lexret_sparse::read_quantized_file;

fn small_config(out: &Path) -> RunConfig {
    let mut config = RunConfig::default_at(out);
    config.tokenizer = TokenizerConfig { max_vocab: 400 };
    config.model = ModelConfig {
        vocab_size: 400,
        hidden_size: 32,
        encoder_layers: 3,
        decoder_layers: 2,
        attention_heads: 4,
        max_sequence_length: 32,
        ff_multiplier: 2,
    };
    config.pretrain = PretrainConfig {
        steps: 30,
        batch_size: 4,
        learning_rate: 1e-3,
        ..Default::default()
    };
    let small_stage = |cfg: StageConfig| StageConfig {
        negatives_per_query: 2,
        mining_depth: 20,
        epochs: 1,
        batch_size: 4,
        learning_rate: 3e-4,
        ..cfg
    };
    config.stage1 = small_stage(config.stage1);
    config.stage2 = small_stage(config.stage2);
    config.stage3 = small_stage(config.stage3);
    config.synth.num_docs = 60;
    config.synth.num_queries = 20;
    config.synth.num_topics = 5;
    config.synth.words_per_topic = 12;
    config.synth.common_words = 24;
    config.synth.entity_pool = 40;
    config.synth.entities_per_doc = 2;
    config.synth.query_entity_words = 1;
    config.synth.doc_len_min = 8;
    config.synth.doc_len_max = 16;
    config.topk_sweep = vec![16, 8, 2];
    config.search_k = 30;
    config
}

fn write_config(dir: &Path) -> PathBuf {
    let config = small_config(dir);
    let path = dir.join("config.json");
    config.save(&path).unwrap();
    path
}

fn lexret(config: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lexret"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("binary runs")
}

fn expect_ok(config: &Path, args: &[&str]) {
    let out = lexret(config, args);
    assert!(
        out.status.success(),
        "lexret {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn prerequisite_ordering_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());

    // search before anything exists
    let out = lexret(&config, &["search", "--k", "5"]);
    assert_eq!(out.status.code(), Some(3), "missing prerequisite must exit 3");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("run `lexret"), "ordering hint missing: {stderr}");

    // stage 2 before stage 1
    expect_ok(&config, &["gen-data"]);
    expect_ok(&config, &["build-vocab"]);
    expect_ok(&config, &["pretrain"]);
    let out = lexret(&config, &["finetune", "--stage", "2"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("finetune --stage 1"));
}

#[test]
fn artifacts_are_byte_identical_across_reruns() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [dir_a.path(), dir_b.path()] {
        let config = write_config(dir);
        for args in [
            vec!["gen-data"],
            vec!["build-vocab"],
            vec!["pretrain"],
            vec!["encode", "--topk", "8"],
            vec!["index", "--topk", "8"],
            vec!["search", "--k", "10", "--topk", "8"],
        ] {
            expect_ok(&config, &args);
        }
    }
    // Same config content except the embedded output paths, same seed:
    // corpus, vocabulary, run files and posting payloads must agree.
    let read = |dir: &Path, rel: &str| std::fs::read(dir.join(rel)).unwrap();
    for rel in ["data/corpus.tsv", "data/train_queries.tsv", "vocab.txt"] {
        assert_eq!(read(dir_a.path(), rel), read(dir_b.path(), rel), "{rel} differs");
    }
    assert_eq!(
        read(dir_a.path(), "search/run-top8.trec"),
        read(dir_b.path(), "search/run-top8.trec"),
        "run files differ"
    );

    // Re-running a subcommand in place reproduces its artifact exactly.
    let config_a = dir_a.path().join("config.json");
    let checkpoint_before = read(dir_a.path(), "pretrain/checkpoint.ckpt");
    expect_ok(&config_a, &["pretrain"]);
    assert_eq!(checkpoint_before, read(dir_a.path(), "pretrain/checkpoint.ckpt"));

    let index_before = read(dir_a.path(), "index/index-top8.idx");
    expect_ok(&config_a, &["index", "--topk", "8"]);
    assert_eq!(index_before, read(dir_a.path(), "index/index-top8.idx"));
}

#[test]
fn topk_limits_every_returned_document() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    for args in [
        vec!["gen-data"],
        vec!["build-vocab"],
        vec!["pretrain"],
        vec!["encode", "--topk", "8"],
        vec!["index", "--topk", "8"],
        vec!["search", "--k", "10", "--topk", "8"],
    ] {
        expect_ok(&config, &args);
    }
    let (_, vectors) = read_quantized_file(&dir.path().join("encode/vectors.topk8.quantized.txt")).unwrap();
    let by_id: std::collections::BTreeMap<&String, usize> =
        vectors.iter().map(|(id, v)| (id, v.nnz())).collect();
    let run = std::fs::read_to_string(dir.path().join("search/run-top8.trec")).unwrap();
    let mut returned = 0;
    for line in run.lines() {
        let doc = line.split_whitespace().nth(2).unwrap();
        let nnz = by_id[&doc.to_string()];
        assert!(nnz <= 8, "doc {doc} contributed {nnz} terms");
        returned += 1;
    }
    assert!(returned > 0, "search returned nothing");
}

#[test]
fn encode_runs_inference_once_per_document() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(dir.path());
    expect_ok(&config_path, &["gen-data"]);
    expect_ok(&config_path, &["build-vocab"]);
    expect_ok(&config_path, &["pretrain"]);

    let config = RunConfig::load(&config_path).unwrap();
    let many_levels = [64, 32, 16, 8, 4, 2, 1];
    let summary = lexret_cli::commands::cmd_encode(&config, &many_levels, None).unwrap();
    assert_eq!(
        summary.inference_calls, config.synth.num_docs,
        "inference calls must equal the document count, independent of the sweep size"
    );
    // The meta line in the artifact records the same count.
    let (meta, _) = read_quantized_file(&dir.path().join("encode/vectors.topk8.quantized.txt")).unwrap();
    let calls: usize = meta
        .iter()
        .find(|(k, _)| k == "inference_calls")
        .map(|(_, v)| v.parse().unwrap())
        .unwrap();
    assert_eq!(calls, config.synth.num_docs);
}

#[test]
fn eval_refuses_runs_from_mismatched_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(dir.path());
    for args in [
        vec!["gen-data"],
        vec!["build-vocab"],
        vec!["pretrain"],
        vec!["encode", "--topk", "8"],
        vec!["index", "--topk", "8"],
        vec!["search", "--k", "10", "--topk", "8"],
    ] {
        expect_ok(&config_path, &args);
    }
    let genuine = dir.path().join("search/run-top8.trec");
    let forged = dir.path().join("forged.trec");
    let content = std::fs::read_to_string(&genuine).unwrap();
    let swapped: String = content
        .lines()
        .map(|l| {
            let mut fields: Vec<&str> = l.split_whitespace().collect();
            fields[5] = "lexret-0000000000000000-ffffffffffffffff";
            fields.join(" ") + "\n"
        })
        .collect();
    std::fs::write(&forged, swapped).unwrap();

    let ok = lexret(&config_path, &["eval", "--run", genuine.to_str().unwrap()]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));

    let out = lexret(
        &config_path,
        &[
            "eval",
            "--run",
            genuine.to_str().unwrap(),
            "--run",
            forged.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(4), "mismatched corpora must be refused");
    assert!(String::from_utf8_lossy(&out.stderr).contains("different corpora"));
}

#[test]
fn vocab_rebuild_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    expect_ok(&config, &["gen-data"]);
    expect_ok(&config, &["build-vocab"]);
    let first = std::fs::read(dir.path().join("vocab.txt")).unwrap();
    expect_ok(&config, &["build-vocab"]);
    assert_eq!(first, std::fs::read(dir.path().join("vocab.txt")).unwrap());
}
