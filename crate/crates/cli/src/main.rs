//! `dregcn` command-line tool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dregcn_core::encoder::EncoderMode;
use dregcn_core::heads::MessageVariant;

/// Joint aspect/opinion extraction and aspect sentiment tagging with
/// relation-aware graph convolutions.
#[derive(Debug, Parser)]
#[command(name = "dregcn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one or more seeded runs and write checkpoints and a manifest.
    Train(CommonArgs),
    /// Score a checkpoint on a labelled corpus.
    Evaluate(CommonArgs),
    /// Tag a corpus with a checkpoint.
    Predict(CommonArgs),
    /// Run the six ablation configurations and report F1-I per row.
    Ablate(CommonArgs),
    /// Finite-difference checks of every layer and of the full model.
    Gradcheck(GradcheckArgs),
    /// Sentence, aspect-term and opinion-term counts of corpora.
    Stats(CommonArgs),
}

#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory searched for relative config paths and a default dregcn.toml.
    #[arg(long, env = config::CONFIG_DIR_ENV, hide_env_values = true)]
    pub config_dir: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub dev_corpus: Option<PathBuf>,
    #[arg(long)]
    pub test_corpus: Option<PathBuf>,
    /// General-purpose word vectors (`word v1 ... vd` per line).
    #[arg(long)]
    pub general_emb: Option<PathBuf>,
    /// Domain-specific word vectors.
    #[arg(long)]
    pub domain_emb: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// cnn_only, vanilla_gcn, dregcn or dregcn_plus_cnn.
    #[arg(long)]
    pub mode: Option<EncoderMode>,
    /// none, predictions or representations.
    #[arg(long)]
    pub mp_variant: Option<MessageVariant>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Output directory (train, ablate) or file (evaluate, predict, stats).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Corrupt one backward rule before checking.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Predict(a) => commands::predict(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Stats(a) => commands::stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
