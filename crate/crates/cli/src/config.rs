//! The run configuration: one JSON file drives every subcommand. A saved
//! config re-loads to an equal value, and each subcommand writes the
//! resolved config it actually used next to its outputs.

use std::path::{Path, PathBuf};

use lexret_finetune::StageConfig;
use lexret_model::pretrain::PretrainConfig;
use lexret_model::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::hashing::fnv1a;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathsConfig {
    pub output_dir: PathBuf,
    pub corpus: PathBuf,
    pub train_queries: PathBuf,
    pub train_qrels: PathBuf,
    pub dev_queries: PathBuf,
    pub dev_qrels: PathBuf,
    pub teacher_scores: PathBuf,
}

impl PathsConfig {
    /// Standard layout rooted at `out`: data files under `data/`, the
    /// teacher file under `stage3/`.
    pub fn rooted_at(out: &Path) -> PathsConfig {
        PathsConfig {
            output_dir: out.to_path_buf(),
            corpus: out.join("data/corpus.tsv"),
            train_queries: out.join("data/train_queries.tsv"),
            train_qrels: out.join("data/train_qrels.txt"),
            dev_queries: out.join("data/dev_queries.tsv"),
            dev_qrels: out.join("data/dev_qrels.txt"),
            teacher_scores: out.join("stage3/teacher.tsv"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    /// Vocabulary cap, reserved ids included.
    pub max_vocab: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub tokenizer: TokenizerConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub stage3: StageConfig,
    pub synth: SynthConfig,
    /// Document sparsification sweep for `encode`.
    pub topk_sweep: Vec<usize>,
    /// Retrieval depth for run files.
    pub search_k: usize,
}

impl RunConfig {
    /// Desk-scale defaults rooted at `out`; a full pipeline finishes in
    /// minutes on one core.
    pub fn default_at(out: &Path) -> RunConfig {
        RunConfig {
            seed: 42,
            paths: PathsConfig::rooted_at(out),
            tokenizer: TokenizerConfig { max_vocab: 2000 },
            model: ModelConfig {
                vocab_size: 2000,
                hidden_size: 48,
                encoder_layers: 4,
                decoder_layers: 2,
                attention_heads: 4,
                max_sequence_length: 48,
                ff_multiplier: 4,
            },
            pretrain: PretrainConfig {
                steps: 900,
                batch_size: 8,
                learning_rate: 3e-3,
                ..Default::default()
            },
            stage1: StageConfig {
                negatives_per_query: 4,
                epochs: 3,
                batch_size: 4,
                learning_rate: 1.5e-3,
                ..StageConfig::stage1()
            },
            stage2: StageConfig {
                negatives_per_query: 4,
                mining_depth: 50,
                epochs: 3,
                batch_size: 4,
                learning_rate: 1e-3,
                ..StageConfig::stage2()
            },
            stage3: StageConfig {
                negatives_per_query: 4,
                mining_depth: 50,
                epochs: 3,
                batch_size: 4,
                learning_rate: 1e-3,
                ..StageConfig::stage3()
            },
            synth: SynthConfig::default(),
            topk_sweep: vec![256, 128, 64, 32, 16, 8, 4, 2, 1],
            search_k: 100,
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let content = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            detail: format!("cannot read config {}: {e}", path.display()),
        })?;
        let config: RunConfig = serde_json::from_str(&content).map_err(|e| CliError::Config {
            detail: format!("cannot parse config {}: {e}", path.display()),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("config serializes");
        crate::io::atomic_write(path, (json + "\n").as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |r: std::result::Result<(), lexret_model::ModelError>| {
            r.map_err(|e| CliError::Config { detail: e.to_string() })
        };
        ok(self.model.validate())?;
        ok(self.pretrain.validate())?;
        for (cfg, stage) in [(&self.stage1, 1), (&self.stage2, 2), (&self.stage3, 3)] {
            if cfg.stage != stage {
                return Err(CliError::Config {
                    detail: format!("stage{} entry declares stage {}", stage, cfg.stage),
                });
            }
            cfg.validate().map_err(|e| CliError::Config { detail: e.to_string() })?;
        }
        if self.topk_sweep.is_empty() || self.topk_sweep.iter().any(|&k| k == 0) {
            return Err(CliError::Config { detail: "top-k sweep must be non-empty, all positive".into() });
        }
        if self.search_k == 0 {
            return Err(CliError::Config { detail: "search depth must be positive".into() });
        }
        self.synth.validate().map_err(|detail| CliError::Config { detail })?;
        Ok(())
    }

    /// Stable hash over the serialized config; embedded in every artifact.
    pub fn config_hash(&self) -> u64 {
        fnv1a(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}
