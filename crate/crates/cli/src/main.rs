mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Failure;

#[derive(Parser)]
#[command(name = "zoorank", version, about = "Rank a zoo of pre-trained models for a target task")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct GlobalArgs {
    /// Worker threads for scoring, generation and training.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Emit machine-readable JSON instead of a table.
    #[arg(long, global = true)]
    pub json: bool,
    /// JSON file with optional "zoo" and "train" sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the config in use.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic zoo and benchmark.
    SynthZoo(commands::SynthZooArgs),
    /// Score every model of a task with one estimator.
    Score(commands::ScoreArgs),
    /// Aggregate score files by Copeland voting.
    Aggregate(commands::AggregateArgs),
    /// Train a ranker on a benchmark's source datasets.
    Train(commands::TrainArgs),
    /// Rank a task's models with a trained ranker.
    Rank(commands::RankArgs),
    /// Weighted Kendall's tau of every method on the held-out tasks.
    Eval(commands::EvalArgs),
    /// Mean model-to-cluster similarities for spider charts.
    Chart(commands::ChartArgs),
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.global.threads == 0 {
        return Err(Failure::usage("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build_global()
        .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    let g = &cli.global;
    match &cli.command {
        Command::SynthZoo(a) => commands::synth_zoo(g, a),
        Command::Score(a) => commands::score(g, a),
        Command::Aggregate(a) => commands::aggregate(g, a),
        Command::Train(a) => commands::train(g, a),
        Command::Rank(a) => commands::rank(g, a),
        Command::Eval(a) => commands::eval(g, a),
        Command::Chart(a) => commands::chart(g, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
