mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use dermnet_core::backbone::BackboneName;
use dermnet_core::ensemble::Combiner;

#[derive(Debug, Parser)]
#[command(
    name = "dermnet",
    version,
    about = "Fine-tune, ensemble and score dermoscopy lesion classifiers"
)]
struct Cli {
    /// Flat JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stratified train/validation split; writes split.csv plus per-subset ground truth.
    Split(commands::SplitArgs),
    /// Two-phase fine-tuning of one backbone.
    Train(commands::TrainArgs),
    /// Class probabilities for a set of images, in submission layout.
    Predict(commands::PredictArgs),
    /// Combines prediction files by probability averaging or majority vote.
    Ensemble(commands::EnsembleArgs),
    /// Balanced multi-class accuracy of a prediction file.
    Score(commands::ScoreArgs),
    #[command(name = "make-synthetic", hide = true)]
    MakeSynthetic(commands::SyntheticArgs),
}

pub(crate) fn parse_backbone(s: &str) -> Result<BackboneName, String> {
    s.parse().map_err(|e: dermnet_core::Error| e.to_string())
}

pub(crate) fn parse_combiner(s: &str) -> Result<Combiner, String> {
    s.parse().map_err(|e: dermnet_core::Error| e.to_string())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let globals = commands::Globals {
        config: cli.config,
        seed: cli.seed,
        json: cli.json,
    };
    match cli.command {
        Command::Split(args) => commands::split(&globals, args),
        Command::Train(args) => commands::train(&globals, args),
        Command::Predict(args) => commands::predict(&globals, args),
        Command::Ensemble(args) => commands::ensemble(&globals, args),
        Command::Score(args) => commands::score(&globals, args),
        Command::MakeSynthetic(args) => commands::make_synthetic(&globals, args),
    }
}
