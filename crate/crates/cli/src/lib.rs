//! The `gradcal` command-line tool.

pub mod args;
pub mod commands;
pub mod overlay;

use std::process::ExitCode;

use anyhow::{Context, Result};

pub use args::{Cli, Command};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "GRADCAL_THREADS";

pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("cannot configure the thread pool")
}

pub fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Calibrate(a) => commands::cmd_calibrate(a),
        Command::Synth(a) => commands::cmd_synth(a),
        Command::Overlay(a) => commands::cmd_overlay(a),
        Command::ValidateGradients(a) => commands::cmd_validate_gradients(a),
    }
}
