//! Poster generation pipeline, toy sampler harness and metrics, behind the
//! `regionpost` binary.

pub mod commands;
pub mod config;
pub mod failure;
pub mod font;
pub mod overlay;
pub mod synth;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::Value;

use commands::{GenerateArgs, MetricsArgs, SampleToyArgs};
use failure::Failure;
use regionpost_core::sampler::SamplerMode;

#[derive(Debug, Parser)]
#[command(name = "regionpost", version, about = "Contrast-driven poster generation over region masks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full pipeline: agents, region sampler, text overlay, metrics.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides paths.output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Region sampler on analytic Gaussian targets, without agents.
    SampleToy {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long = "r-frac")]
        r_frac: Option<f64>,
        #[arg(long)]
        w: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        mode: Option<SamplerMode>,
        #[arg(long)]
        seed: Option<u64>,
        /// Mask pixels per latent cell.
        #[arg(long, default_value_t = 1)]
        scale: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Boundary gradient disparity and region style divergence of an image.
    Metrics {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long = "bgd-strip", default_value_t = regionpost_core::metrics::DEFAULT_BGD_STRIP)]
        bgd_strip: usize,
        #[arg(long, default_value = "metrics.json")]
        out: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<Value, Failure> {
    match cli.command {
        Command::Generate { config, out, seed } => commands::cmd_generate(&GenerateArgs { config, out, seed }),
        Command::SampleToy {
            mask,
            targets,
            steps,
            tau,
            r_frac,
            w,
            eta,
            mode,
            seed,
            scale,
            out,
        } => commands::cmd_sample_toy(&SampleToyArgs {
            mask,
            targets,
            steps,
            tau,
            r_frac,
            w,
            eta,
            mode,
            seed,
            scale,
            out,
        }),
        Command::Metrics {
            image,
            mask,
            features,
            bgd_strip,
            out,
        } => commands::cmd_metrics(&MetricsArgs {
            image,
            mask,
            features,
            bgd_strip,
            out,
        }),
    }
}
