//! `dialpunct`: align transcripts, build corpora, train and apply
//! punctuation models.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 numerical failure. Errors are printed to stderr as one JSON
//! object per line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "dialpunct", version, about = "Punctuation restoration for two-channel conversational transcripts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Align one CTM file with its punctuated transcript and write the labelled dialogue.
    Align(AlignArgs),
    /// Align every CTM/punctuated pair in two directories into one corpus file.
    Prepare(PrepareArgs),
    /// Generate a synthetic labelled corpus and its rule trace.
    Synth(SynthArgs),
    /// Train a model on a dialogue corpus.
    Train(TrainArgs),
    /// Label dialogues with a trained model.
    Predict(PredictArgs),
    /// Score a model or a prediction file against a labelled corpus.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Time-marked words (`<conv> <A|B> <start> <duration> <token>` per line).
    #[arg(long)]
    pub ctm: PathBuf,
    /// Punctuated transcript (`<start> <end> <A|B>: <text>` per line).
    #[arg(long)]
    pub punct: PathBuf,
    /// Output dialogue file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Directory of `<name>.ctm` files.
    #[arg(long)]
    pub ctm_dir: PathBuf,
    /// Directory of `<name>.txo` files with matching names.
    #[arg(long)]
    pub punct_dir: PathBuf,
    /// Output corpus file.
    #[arg(long)]
    pub out: PathBuf,
    /// Embedding file to prune to the corpus vocabulary.
    #[arg(long, requires = "embeddings_out")]
    pub embeddings: Option<PathBuf>,
    /// Where to write the pruned embeddings.
    #[arg(long, requires = "embeddings")]
    pub embeddings_out: Option<PathBuf>,
    /// Most frequent corpus tokens kept when pruning.
    #[arg(long, default_value_t = 50_000)]
    pub vocab_size: usize,
    /// Single-threaded processing.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of conversations.
    #[arg(long, default_value_t = 200)]
    pub conversations: usize,
    /// Words per conversation.
    #[arg(long, default_value_t = 500)]
    pub words: usize,
    /// Generator seed (overrides the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key = value` generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output dialogue file.
    #[arg(long)]
    pub out: PathBuf,
    /// Output rule trace (tab-separated).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `key = value` run config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Labelled dialogue corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Embedding file (`token v1 .. v300` per line).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Output directory for the checkpoint, vocabulary, split and log.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Model architecture: cnn or blstm.
    #[arg(long)]
    pub arch: Option<String>,
    /// Seed for the split, initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop the two timing columns from the input.
    #[arg(long)]
    pub no_time_features: bool,
    /// Weight the loss by inverse class frequency.
    #[arg(long)]
    pub class_weighting: bool,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Single-threaded, bitwise-reproducible run.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub model_dir: PathBuf,
    /// Embedding file used at training time.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Dialogue file; labels, if present, are ignored.
    #[arg(long)]
    pub input: PathBuf,
    /// Output dialogue file with predicted labels.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write punctuated text, one line per conversation side.
    #[arg(long)]
    pub render: Option<PathBuf>,
    /// Single-threaded processing.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Labelled reference corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory written by `train`; predictions are computed with it.
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    pub model_dir: Option<PathBuf>,
    /// Embedding file used at training time (with --model-dir).
    #[arg(long, requires = "model_dir")]
    pub embeddings: Option<PathBuf>,
    /// Labelled prediction file to score instead of running a model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Restrict to one part of the training split: train, validation or test.
    #[arg(long)]
    pub part: Option<String>,
    /// Write the normalized confusion matrix here instead of standard output.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Single-threaded processing.
    #[arg(long)]
    pub deterministic: bool,
}

fn report(err: &CliError) -> ExitCode {
    let code = err.exit_code();
    let line = serde_json::json!({
        "error": err.kind(),
        "message": err.to_string(),
        "exit_code": code,
    });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            // Usage text first, then the machine-readable line.
            let _ = e.print();
            return report(&CliError::Usage(e.kind().to_string()));
        }
    };
    let result = match cli.command {
        Command::Align(a) => commands::align(a),
        Command::Prepare(a) => commands::prepare(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
