use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lexret_cli::commands;
use lexret_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "lexret",
    about = "Lexicon-weighting retrieval: bottleneck pre-training, sparse encoding, impact indexing, evaluation",
    version
)]
struct Cli {
    /// Run configuration file (JSON). When absent, defaults rooted at
    /// --out are used and written there.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for the default configuration.
    #[arg(long, global = true, default_value = "lexret-out")]
    out: PathBuf,

    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the bundled synthetic dataset (corpus, queries, qrels).
    GenData,
    /// Build the word-level vocabulary from the corpus.
    BuildVocab,
    /// Pre-train the lexicon-bottlenecked autoencoder.
    Pretrain,
    /// Retrieval with the pre-trained encoder, no fine-tuning.
    ZeroShot,
    /// BM25 baseline over the same dev split.
    Bm25,
    /// One fine-tuning stage (1: BM25 negatives, 2: hard negatives,
    /// 3: hard negatives + teacher distillation).
    Finetune {
        #[arg(long)]
        stage: u8,
    },
    /// Write the synthetic teacher score file for stage 3.
    Teacher,
    /// Encode the corpus into sparse vectors; one inference pass derives
    /// every requested top-K variant.
    Encode {
        /// Comma-separated top-K levels, e.g. 256,64,8.
        #[arg(long, value_delimiter = ',')]
        topk: Vec<usize>,
        /// Checkpoint to encode with (default: most fine-tuned available).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Build the impact index from encoded vectors.
    Index {
        /// Use the top-K variant of the encoded vectors.
        #[arg(long)]
        topk: Option<usize>,
    },
    /// Query the index and write a TREC run file.
    Search {
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        topk: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate run files against the dev qrels.
    Eval {
        /// Run files to score (all must come from the same corpus).
        #[arg(long, required = true)]
        run: Vec<PathBuf>,
    },
    /// The whole chain: data, vocab, pre-training, baselines, stages 1-3.
    Pipeline,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default_at(&cli.out),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::GenData => commands::cmd_gen_data(&config),
        Command::BuildVocab => commands::cmd_build_vocab(&config),
        Command::Pretrain => commands::cmd_pretrain(&config),
        Command::ZeroShot => commands::cmd_zero_shot(&config).map(|_| ()),
        Command::Bm25 => commands::cmd_bm25(&config).map(|_| ()),
        Command::Finetune { stage } => commands::cmd_finetune(&config, stage).map(|_| ()),
        Command::Teacher => commands::cmd_teacher(&config),
        Command::Encode { topk, checkpoint } => {
            let levels = if topk.is_empty() { config.topk_sweep.clone() } else { topk };
            commands::cmd_encode(&config, &levels, checkpoint.as_deref()).map(|_| ())
        }
        Command::Index { topk } => commands::cmd_index(&config, topk).map(|_| ()),
        Command::Search { k, topk, checkpoint } => {
            commands::cmd_search(&config, k, topk, checkpoint.as_deref())
        }
        Command::Eval { run } => commands::cmd_eval(&config, &run).map(|_| ()),
        Command::Pipeline => commands::cmd_pipeline(&config).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
