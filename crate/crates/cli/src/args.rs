use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gradcal::{GradientMode, LossMode};

#[derive(Debug, Parser)]
#[command(
    name = "gradcal",
    version,
    about = "Target-less RGB-thermal camera calibration"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate the thermal camera of a dataset.
    Calibrate(CalibrateArgs),
    /// Render a synthetic dataset with a known calibration.
    Synth(SynthArgs),
    /// Write alignment overlays for one dataset record.
    Overlay(OverlayArgs),
    /// Compare analytic and finite-difference gradients.
    ValidateGradients(ValidateArgs),
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigOverrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long, value_name = "signed|magnitude")]
    pub loss_mode: Option<LossMode>,
    #[arg(long, value_name = "analytic|numeric")]
    pub gradient_mode: Option<GradientMode>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for calibration.txt and loss_history.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Rig description; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Index of the manifest record to render.
    #[arg(long, default_value_t = 0)]
    pub record: usize,
    #[arg(long)]
    pub calibration: PathBuf,
    /// Supplies the loss mode and smoothing kernel.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for overlay.ppm and gradient_difference.pgm.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// State to validate at; the lens-derived initial state otherwise.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
    /// Scales one analytic component by 1.05 before comparing. Exercises
    /// the failure path.
    #[arg(long, hide = true, value_name = "PARAM")]
    pub corrupt_derivative: Option<String>,
}
