//! Pipeline entry point: each subcommand runs one stage against a run directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod run;
pub mod scorer;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{annotate, data, evaluate, reward, Ctx};
use config::RunConfig;
use error::{exit, Result};
use run::{RunDir, RunLock};

#[derive(Debug, Parser)]
#[command(name = "longpref", version, about = "Preference-data synthesis and reward evaluation pipeline")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "longpref.toml")]
    pub config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `votes`.
    #[arg(long, global = true)]
    pub votes: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a candidate pair per prompt from the model pool.
    Sample,
    /// Adjudicate sampled pairs with k judge votes.
    Judge,
    /// Write preference triplets from consensus judgments.
    BuildPairs,
    /// Mix our triplets with an external set.
    Mix(data::MixArgs),
    /// Fit a linear Bradley-Terry scorer.
    TrainRm(reward::TrainArgs),
    /// Pairwise accuracy of a fitted scorer.
    EvalRm(reward::EvalArgs),
    /// Compare several scorers on one test set.
    Benchmark(reward::BenchmarkArgs),
    /// Win rate of candidate responses over a baseline.
    Winrate(evaluate::WinRateArgs),
    /// Best-of-N sampling under a scorer.
    Bon(evaluate::BonArgs),
    /// Clipped-PPO run on a tabular toy environment.
    PpoToy(evaluate::PpoArgs),
    /// Serve the human annotation API.
    ServeAnnotation(annotate::ServeArgs),
    /// Human/AI agreement.
    Agreement(annotate::AgreementArgs),
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(votes) = cli.votes {
        config.votes = votes;
    }
    config.validate()?;
    let dir = RunDir::new(&config);
    let _lock = RunLock::acquire(&dir.root)?;
    dir.record_provenance(&config)?;
    let ctx = Ctx { config, dir };
    match &cli.command {
        Command::Sample => data::sample(&ctx),
        Command::Judge => data::judge(&ctx),
        Command::BuildPairs => data::build_pairs(&ctx),
        Command::Mix(a) => data::mix(&ctx, a),
        Command::TrainRm(a) => reward::train_rm(&ctx, a),
        Command::EvalRm(a) => reward::eval_rm(&ctx, a),
        Command::Benchmark(a) => reward::benchmark(&ctx, a),
        Command::Winrate(a) => evaluate::winrate(&ctx, a),
        Command::Bon(a) => evaluate::bon(&ctx, a),
        Command::PpoToy(a) => evaluate::ppo_toy(&ctx, a),
        Command::ServeAnnotation(a) => annotate::serve(&ctx, a),
        Command::Agreement(a) => annotate::agreement(&ctx, a),
    }
}

/// Parses arguments, runs, and maps the outcome to an exit code.
pub fn main_entry() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => std::process::ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::from(e.exit_code())
        }
    }
}
