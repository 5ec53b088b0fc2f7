use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fcc::data::Signal;
use fcc::tensor::Precision;

mod commands;
mod config;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "fcc", version, about = "Train and evaluate dual-channel response rankers")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Clone, Debug, Default, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `train.seed`, which also seeds parameter initialisation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Recorded in the manifest; computation is single-threaded.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub precision: Option<Precision>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert an upstream tab-separated export into canonical TSV.
    Convert {
        #[arg(long)]
        input: PathBuf,
    },
    /// Write a synthetic corpus in canonical TSV.
    Synth {
        #[arg(long, default_value = "provenance")]
        mode: Signal,
        /// Number of ranking lists.
        #[arg(long, default_value_t = 2000)]
        size: usize,
        #[arg(long)]
        min_turns: Option<usize>,
        #[arg(long)]
        max_turns: Option<usize>,
    },
    /// Pretrain skip-gram word vectors on a canonical TSV.
    PretrainEmbeddings {
        /// Defaults to `data.train` from the config.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train one model; writes checkpoint, log, vocabulary and manifest to `--out`.
    Train,
    /// Score a test set with a checkpoint, or summarise an existing scores file.
    Eval {
        #[arg(long, required_unless_present = "scores")]
        checkpoint: Option<PathBuf>,
        /// Defaults to `data.test` of the training run.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Reject the checkpoint unless it holds this variant.
        #[arg(long)]
        variant: Option<String>,
        /// Per-list scores file to summarise instead of running a model.
        #[arg(long, conflicts_with = "checkpoint")]
        scores: Option<PathBuf>,
    },
    /// Train and evaluate several variants on identical data and seeds.
    Ablate {
        /// Comma-separated variant names; defaults to `ablate.variants`.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Compare evaluated runs with paired t-tests.
    Report {
        /// Run or eval directories containing `scores.tsv`.
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<fcc::Error>() {
            return match e {
                fcc::Error::Config(_) => 2,
                fcc::Error::Numeric(_) => 4,
                fcc::Error::Data(_)
                | fcc::Error::Io(_)
                | fcc::Error::Checkpoint { .. }
                | fcc::Error::Shape { .. }
                | fcc::Error::Dimension { .. }
                | fcc::Error::Contract(_) => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = &cli.common;
    let result = match cli.command {
        Command::Convert { input } => commands::convert(c, &input),
        Command::Synth {
            mode,
            size,
            min_turns,
            max_turns,
        } => commands::synth(c, mode, size, min_turns, max_turns),
        Command::PretrainEmbeddings { input } => commands::pretrain_embeddings(c, input),
        Command::Train => commands::train(c),
        Command::Eval {
            checkpoint,
            test,
            variant,
            scores,
        } => match scores {
            Some(scores) => commands::eval_scores(c, &scores),
            None => commands::eval(c, checkpoint.as_deref().expect("required by clap"), test, variant),
        },
        Command::Ablate { variants } => commands::ablate(c, variants),
        Command::Report { runs } => commands::report(c, &runs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
