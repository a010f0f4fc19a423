//! Single entry point wiring the pipeline end to end: corpus generation,
//! toy preference training, rollout scoring, pair curation, surface
//! metrics, and judge evaluation.
//!
//! Exit codes: 0 success, 1 validation error (bad config, bad input
//! files), 2 runtime failure (non-finite loss, unreachable endpoint).

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "speechworthy", version, about)]
struct Cli {
    /// Seed recorded in every output artifact and used wherever the
    /// subcommand needs randomness.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic style-transfer corpus (train/heldout JSONL
    /// plus the vocabulary file).
    GenCorpus(commands::GenCorpusArgs),
    /// Preference-train the toy model and write a checkpoint plus report.
    TrainToy(commands::TrainToyArgs),
    /// Score rollouts through the suitability endpoint.
    ScoreRollouts(commands::ScoreRolloutsArgs),
    /// Filter scored rollouts into chosen/rejected preference pairs.
    MakePairs(commands::MakePairsArgs),
    /// Word count, dependency depth, and NV% over a response file.
    EvalSurface(commands::EvalSurfaceArgs),
    /// Judge candidate responses against a benchmark via an endpoint.
    EvalJudge(commands::EvalJudgeArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = match config::RunContext::load(cli.seed, cli.config.as_deref()) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::GenCorpus(args) => commands::gen_corpus(&ctx, args),
        Command::TrainToy(args) => commands::train_toy(&ctx, args),
        Command::ScoreRollouts(args) => commands::score_rollouts(&ctx, args),
        Command::MakePairs(args) => commands::make_pairs(&ctx, args),
        Command::EvalSurface(args) => commands::eval_surface(&ctx, args),
        Command::EvalJudge(args) => commands::eval_judge(&ctx, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
