//! `featgen` command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 data or shape problems, 4 a class
//! without the vector it needs, 5 a numeric failure during training.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use featgen::dataset::InputMode;
use featgen::episodic::CentroidRule;

use crate::commands::LossMask;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(featgen::Error),
}

impl From<featgen::Error> for CliError {
    fn from(e: featgen::Error) -> Self {
        Self::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Core(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Core(e) => e.fmt(f),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use featgen::Error as E;
        match self {
            Self::Usage(_) | Self::Core(E::InvalidArgument(_)) => 2,
            Self::Core(E::MissingClass { .. }) => 4,
            Self::Core(E::NonFiniteLoss { .. } | E::NonFiniteGradient(_)) => 5,
            Self::Core(E::Shape { .. } | E::Dim { .. } | E::Format(_) | E::Io(_)) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "featgen", version, about = "Semantic-conditioned feature generation for few-shot classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic benchmark: train/test features, semantics, class means.
    Synth(SynthArgs),
    /// Train generator, discriminator, and classifier on a feature file.
    Train(TrainArgs),
    /// Few-shot evaluation, baseline and generator-augmented arms.
    Eval(EvalArgs),
    /// Retrain a blend-mode generator per alpha and evaluate each.
    AblateAlpha(AblateArgs),
    /// Export episode points projected to 2-D with PCA.
    ExportEmbeddings(ExportArgs),
}

#[derive(Args, Clone)]
pub struct Common {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat key=value file; flags override it. Manifests work here too.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub classes_train: Option<usize>,
    #[arg(long)]
    pub classes_test: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub visual_dim: Option<usize>,
    #[arg(long)]
    pub semantic_dim: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f32>,
    #[arg(long)]
    pub map_seed: Option<u64>,
    #[arg(long)]
    pub semantic_noise: Option<f32>,
    #[arg(long)]
    pub sentences: Option<usize>,
}

#[derive(Args, Clone)]
pub struct TrainOpts {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    /// Generator loss terms to keep, e.g. `classifier,cosine`.
    #[arg(long)]
    pub loss_mask: Option<LossMask>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// FGS1 class vectors or raw sentence-vector text.
    #[arg(long)]
    pub semantics: Option<PathBuf>,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long)]
    pub mode: Option<InputMode>,
    #[arg(long)]
    pub alpha: Option<f32>,
    /// Continue from this checkpoint; `--epochs` counts the epochs it already has.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    /// Also save the model every this many epochs.
    #[arg(long)]
    pub checkpoint_interval: Option<usize>,
}

#[derive(Args, Clone)]
pub struct EpisodeOpts {
    #[arg(long)]
    pub way: Option<usize>,
    #[arg(long)]
    pub query: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f32>,
    /// Generated features per class.
    #[arg(long)]
    pub generated: Option<usize>,
    #[arg(long)]
    pub rule: Option<CentroidRule>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub semantics: Option<PathBuf>,
    #[command(flatten)]
    pub episode: EpisodeOpts,
    /// Repeat or comma-separate for several shot counts.
    #[arg(long, value_delimiter = ',')]
    pub shot: Vec<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Generator input mode the checkpoint was trained with.
    #[arg(long)]
    pub mode: Option<InputMode>,
    #[arg(long)]
    pub alpha: Option<f32>,
}

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub train_features: Option<PathBuf>,
    #[arg(long)]
    pub test_features: Option<PathBuf>,
    #[arg(long)]
    pub semantics: Option<PathBuf>,
    /// Alpha grid; repeat or comma-separate.
    #[arg(long = "alpha", value_delimiter = ',')]
    pub alphas: Vec<f32>,
    #[command(flatten)]
    pub train: TrainOpts,
    #[command(flatten)]
    pub episode: EpisodeOpts,
    #[arg(long)]
    pub shot: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub semantics: Option<PathBuf>,
    /// True class embeddings (FGS1); defaults to class means of `--features`.
    #[arg(long)]
    pub means: Option<PathBuf>,
    #[command(flatten)]
    pub episode: EpisodeOpts,
    #[arg(long)]
    pub shot: Option<usize>,
    /// Number of consecutive episodes to export, starting at `--first-episode`.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub first_episode: Option<usize>,
    #[arg(long)]
    pub mode: Option<InputMode>,
    #[arg(long)]
    pub alpha: Option<f32>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::AblateAlpha(a) => commands::ablate_alpha(a),
        Command::ExportEmbeddings(a) => commands::export_embeddings(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("featgen: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
