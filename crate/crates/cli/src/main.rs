//! `dpn`: collect random interaction data, train the planning-network metric
//! and its baselines, evaluate metrics against true distance, run RL on a
//! metric-derived reward and plot the resulting curves.

mod commands;
mod config;
mod error;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dpn::env::EnvKind;
use dpn::io::ModelKind;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "dpn", version, about = "Distributional planning networks: learned goal metrics from random interaction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record random-action episodes to a DPND dataset.
    Collect(CollectArgs),
    /// Train a model on a dataset and write DPNW weights plus a loss CSV.
    Train(TrainArgs),
    /// Rank-correlate metrics with true distance and trace them along a
    /// reaching trajectory.
    Eval(EvalArgs),
    /// Train an actor-critic whose only reward comes from a metric.
    Rl(RlArgs),
    /// Draw CSV curves as an SVG line chart.
    Plot(PlotArgs),
}

fn parse_env(s: &str) -> Result<EnvKind, String> {
    s.parse()
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// pointmass or reacher; defaults to the config's `rl.env`.
    #[arg(long, value_parser = parse_env)]
    pub env: Option<EnvKind>,
    #[arg(long)]
    pub episodes: usize,
    /// Actions per episode.
    #[arg(long)]
    pub horizon: usize,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Render a second, randomly walking blob.
    #[arg(long)]
    pub distractor: bool,
    /// RunConfig JSON; the desk preset when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// dpn, vae, inverse or upn.
    #[arg(long, value_parser = parse_model, default_value = "dpn")]
    pub model: ModelKind,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history; defaults to the weights path with a `.loss.csv` suffix.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained metric weights (dpn, vae or inverse); the pixel metric is
    /// always evaluated.
    #[arg(long, num_args = 1..)]
    pub weights: Vec<PathBuf>,
    #[arg(long, value_parser = parse_env)]
    pub env: Option<EnvKind>,
    #[arg(long, default_value_t = 500)]
    pub pairs: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub distractor: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RlMetric {
    Dpn,
    Inverse,
    Vae,
    Pixel,
    /// Scripted controller that steers at the true goal; checks the harness.
    Oracle,
}

#[derive(Debug, Args)]
pub struct RlArgs {
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub metric: RlMetric,
    #[arg(long, value_parser = parse_env)]
    pub env: Option<EnvKind>,
    #[arg(long, default_value_t = 0)]
    pub goal_seed: u64,
    /// Training episodes; defaults to the config's `rl.episodes`.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub distractor: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// CSV files with a header; the first column is x, the second y.
    #[arg(long = "in", num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub title: Option<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Collect(a) => commands::collect(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Rl(a) => commands::rl(&a),
        Command::Plot(a) => plot::plot(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
