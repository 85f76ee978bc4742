//! Command-line surface for the classification pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{resolve_out_dir, RunConfig};

#[derive(Parser)]
#[command(
    name = "newsfuse",
    about = "Reliable/unreliable social-post classification: metadata features, \
             a block-concatenation text encoder, and fused multi-input training",
    version
)]
struct Cli {
    /// TOML run configuration; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (default: $NEWSFUSE_OUT/<subcommand> or ./newsfuse_out/<subcommand>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Global seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Signal strength in [0, 1].
        #[arg(long)]
        strength: Option<f64>,
    },
    /// Validate, clean, and fold a corpus file.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
    },
    /// Train a metadata-only model (one zoo kind, "stack", or "blend").
    TrainTabular {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        model: Option<String>,
    },
    /// Cross-validate every zoo learner and emit the comparison table.
    TabularReport {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Fine-tune the text model over a block selection (e.g. --blocks 1-12).
    TrainText {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "")]
        blocks: String,
    },
    /// Assemble and train the fused multi-input model.
    TrainFusion {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        strategy: String,
        #[arg(long, default_value = "concat")]
        combine: String,
        #[arg(long)]
        text_checkpoint: Option<PathBuf>,
        #[arg(long)]
        meta_checkpoint: Option<PathBuf>,
        #[arg(long)]
        backbone_checkpoint: Option<PathBuf>,
    },
    /// K-fold cross validation of a named pipeline.
    Cv {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Pipeline: tabular:<model>, or text.
        #[arg(long, default_value = "tabular:gradient_boosting")]
        pipeline: String,
        #[arg(long, default_value_t = 10)]
        folds: usize,
    },
    /// Score a predictions CSV (id,score) against a labels CSV (id,label).
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "run")]
        name: String,
    },
    /// Average several prediction files (unweighted mean of probabilities).
    Ensemble {
        /// Two or more predictions.csv files.
        #[arg(required = true)]
        predictions: Vec<PathBuf>,
    },
    /// Print a checkpoint's manifest and parameter-provenance ledger.
    FusionInspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn run(cli: Cli) -> newsfuse::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.dataset.seed = seed;
    }
    let seed = cfg.dataset.seed;

    let corpus_from = |flag: &Option<PathBuf>| -> newsfuse::Result<PathBuf> {
        flag.clone()
            .or_else(|| cfg.paths.corpus.clone())
            .ok_or_else(|| newsfuse::Error::Config("no corpus given (--corpus or paths.corpus)".into()))
    };

    match &cli.command {
        Command::Synth { n, strength } => {
            let mut cfg = cfg.clone();
            if let Some(s) = strength {
                cfg.synth.strength = *s;
            }
            let out = resolve_out_dir(cli.out.as_deref(), &cfg, "synth");
            commands::cmd_synth(&cfg, *n, seed, &out)
        }
        Command::Preprocess { input } => {
            let out = resolve_out_dir(cli.out.as_deref(), &cfg, "preprocess");
            commands::cmd_preprocess(&cfg, input, &out)
        }
        Command::TrainTabular { corpus, model } => {
            let corpus = corpus_from(corpus)?;
            let model = model.clone().unwrap_or_else(|| cfg.tabular.model.clone());
            let out = resolve_out_dir(cli.out.as_deref(), &cfg, "train-tabular");
            commands::cmd_train_tabular(&cfg, &corpus, &model, seed, &out)
        }
        Command::TabularReport { corpus, folds } => {
            let corpus = corpus_from(corpus)?;
            let out = resolve_out_dir(cli.out.as_deref(), &cfg, "tabular-report");
            commands::cmd_tabular_report(&cfg, &corpus, *folds, seed, &out)
        }
        Command::TrainText { corpus, blocks } => {
            let corpus = corpus_from(corpus)?;
            let blocks = if blocks.is_empty() {
                cfg.text.blocks.clone()
            } else {
                blocks.clone()
            };
            let out = resolve_out_dir(cli.out.as_deref(), &cfg, "train-text");
            commands::cmd_train_text(&cfg, &corpus, &blocks, seed, &out)
        }
        Command::TrainFusion {
            corpus,
            strategy,
            combine,
            text_checkpoint,
            meta_checkpoint,
            backbone_checkpoint,
        } => {
            let corpus = corpus_from(corpus)?;
            let mut cfg = cfg.clone();
            if text_checkpoint.is_some() {
                cfg.paths.text_checkpoint = text_checkpoint.clone();
            }
            if meta_checkpoint.is_some() {
                cfg.paths.meta_checkpoint = meta_checkpoint.clone();
            }
            if backbone_checkpoint.is_some() {
                cfg.paths.backbone_checkpoint = backbone_checkpoint.clone();
            }
            let out = resolve_out_dir(cli.out.as_deref(), &cfg, "train-fusion");
            commands::cmd_train_fusion(&cfg, &corpus, strategy, combine, seed, &out)
        }
        Command::Cv { corpus, pipeline, folds } => {
            let corpus = corpus_from(corpus)?;
            let out = resolve_out_dir(cli.out.as_deref(), &cfg, "cv");
            commands::cmd_cv(&cfg, &corpus, pipeline, *folds, seed, &out)
        }
        Command::Evaluate { predictions, labels, name } => {
            let out = resolve_out_dir(cli.out.as_deref(), &cfg, "evaluate");
            commands::cmd_evaluate(predictions, labels, name, &out)
        }
        Command::Ensemble { predictions } => {
            let out = resolve_out_dir(cli.out.as_deref(), &cfg, "ensemble");
            commands::cmd_ensemble(predictions, &out)
        }
        Command::FusionInspect { checkpoint } => commands::cmd_fusion_inspect(checkpoint),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
