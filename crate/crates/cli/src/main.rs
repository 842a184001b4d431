//! `orchardseg`: generate synthetic orchard data, estimate flow, train the
//! segmenter, evaluate it and compare evaluations.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use orchardseg::config::{FlowSource, CONFIG_ENV};
use orchardseg::datasetio::Split;
use orchardseg::segnet::InputMode;

#[derive(Debug, Parser)]
#[command(name = "orchardseg", version, about)]
pub struct Cli {
    /// Run configuration (TOML). Unset fields take their defaults.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset of rendered pairs, masks and flows.
    Gen(GenArgs),
    /// Estimate flow between two images.
    Flow(FlowArgs),
    /// Train the segmenter on a generated dataset.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Welch's t-test between two metrics files.
    Compare(CompareArgs),
    /// Write every intermediate of one sample, depth included, for inspection.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of samples; defaults to train + val + test.
    #[arg(long)]
    pub count: Option<u64>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    /// Image side in pixels (square images).
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub supersample: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    /// First frame (PPM or PGM).
    pub img_a: PathBuf,
    /// Second frame.
    pub img_b: PathBuf,
    /// Output `.flo` file; the colorized flow goes next to it as `.ppm`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and the log.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<InputMode>,
    #[arg(long, value_parser = parse_flow_source)]
    pub flow_source: Option<FlowSource>,
    #[arg(long)]
    pub max_images: Option<u64>,
    #[arg(long)]
    pub val_every: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub lambda_l1: Option<f32>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to score.
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Score the ground-truth masks themselves (a perfect reference).
    #[arg(long, conflicts_with = "checkpoint")]
    pub oracle: bool,
    /// Per-image metrics CSV; aggregates go to `<stem>_summary.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    #[arg(long, value_parser = parse_flow_source)]
    pub flow_source: Option<FlowSource>,
    #[arg(long, default_value_t = orchardseg::eval::DEFAULT_THRESHOLD)]
    pub threshold: f32,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Metrics CSV of the first network.
    pub metrics_a: PathBuf,
    /// Metrics CSV of the second network.
    pub metrics_b: PathBuf,
    /// Comparison report CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Sample index under the configured seed.
    #[arg(long, default_value_t = 0)]
    pub index: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub size: Option<usize>,
}

fn parse_mode(s: &str) -> Result<InputMode, String> {
    s.parse().map_err(|e: orchardseg::Error| e.to_string())
}

fn parse_flow_source(s: &str) -> Result<FlowSource, String> {
    s.parse().map_err(|e: orchardseg::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: orchardseg::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
