use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ispsearch", version = env!("ISPSEARCH_GIT_DESCRIBE"), about = "Search, tune and run camera ISP pipelines")]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit differentiable proxies for every non-differentiable module.
    ProxyTrain(ProxyTrainArgs),
    /// Train the learned stand-in networks.
    LearnedTrain(LearnedTrainArgs),
    /// Run the super-network search and extract a pipeline.
    Search(SearchArgs),
    /// Fine-tune the parameters of an extracted pipeline.
    Finetune(FinetuneArgs),
    /// Process one image with a pipeline.
    Run(RunArgs),
    /// PSNR/SSIM of image pairs or of a pipeline over a dataset.
    Eval(EvalArgs),
    /// Write a synthetic low-light dataset.
    Synth(SynthArgs),
    /// Benchmark per-module latency.
    Latency(LatencyArgs),
}

#[derive(Debug, Args)]
pub struct ProxyTrainArgs {
    /// Directory of sRGB PNG images.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Flat key=value file with proxy training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated modules (default: every non-differentiable module).
    #[arg(long, value_delimiter = ',')]
    pub modules: Vec<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LearnedTrainArgs {
    /// Directory of clean sRGB PNG images.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    /// Gaussian noise std used for denoiser training pairs.
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f32,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f32,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Base,
    Fast,
    Faster,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Base => "base",
            Preset::Fast => "fast",
            Preset::Faster => "faster",
        }
    }
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Flat key=value file whose keys are the search configuration fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory of proxy weight files.
    #[arg(long)]
    pub proxies: PathBuf,
    /// Directory of learned stand-in weights.
    #[arg(long)]
    pub learned: Option<PathBuf>,
    /// Latency table JSON (required when beta > 0).
    #[arg(long)]
    pub latency: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub beta: Option<f32>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Search iterations.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub pipeline: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub proxies: Option<PathBuf>,
    #[arg(long)]
    pub learned: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f32,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Original,
    Proxy,
    Both,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub pipeline: PathBuf,
    /// `.pgm` capture (exposure-compensated with its sidecar ratio) or `.png`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Original)]
    pub mode: ModeArg,
    #[arg(long)]
    pub proxies: Option<PathBuf>,
    #[arg(long)]
    pub learned: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted image (with --target).
    #[arg(long, requires = "target")]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Pipeline to evaluate over --data.
    #[arg(long, requires = "data", conflicts_with = "pred")]
    pub pipeline: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub learned: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 50.0)]
    pub ratio: f32,
    #[arg(long, default_value_t = 0.002)]
    pub sigma: f32,
    #[arg(long, default_value_t = 0.0005)]
    pub poisson: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LatencyArgs {
    /// Side of the square benchmark image.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Learned stand-in weights; timing does not depend on their values,
    /// so fresh weights are used when omitted.
    #[arg(long)]
    pub learned: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}
