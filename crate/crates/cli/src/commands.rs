use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use gradcal::io::{read_config, read_synth_spec, CalibrationFile, DatasetManifest, ManifestRecord};
use gradcal::optim::{
    batch_loss, calibrate, initial_state, validate_gradients, GradientReport, PARAM_NAMES,
};
use gradcal::synth::SynthSpec;
use gradcal::{CalibrationConfig, CalibrationState, PreparedPair};

use crate::args::{CalibrateArgs, ConfigOverrides, OverlayArgs, SynthArgs, ValidateArgs};
use crate::overlay;

pub const CALIBRATION_FILE: &str = "calibration.txt";
pub const HISTORY_FILE: &str = "loss_history.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const OVERLAY_FILE: &str = "overlay.ppm";
pub const GRADIENT_DIFFERENCE_FILE: &str = "gradient_difference.pgm";

fn load_config(path: Option<&Path>, overrides: &ConfigOverrides) -> Result<CalibrationConfig> {
    let mut cfg = match path {
        Some(p) => read_config(p)?,
        None => CalibrationConfig::default(),
    };
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(n) = overrides.iterations {
        cfg.iterations = n;
    }
    if let Some(lr0) = overrides.lr0 {
        cfg.lr0 = lr0;
    }
    if let Some(mode) = overrides.loss_mode {
        cfg.loss_mode = mode;
    }
    if let Some(mode) = overrides.gradient_mode {
        cfg.gradient_mode = mode;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("cannot create {}", path.display()))
}

pub fn history_csv(history: &[f64]) -> String {
    let mut out = String::from("iteration,loss\n");
    for (i, loss) in history.iter().enumerate() {
        let _ = writeln!(out, "{i},{loss:.16e}");
    }
    out
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<ExitCode> {
    let cfg = load_config(args.config.as_deref(), &args.overrides)?;
    let manifest = DatasetManifest::read(&args.manifest)?;
    let dataset = manifest.load_dataset()?;
    if dataset.is_empty() {
        return Err(gradcal::Error::EmptyDataset.into());
    }
    let k_rgb = manifest.require_k_rgb()?;
    let result = calibrate(&dataset, &k_rgb, &cfg)?;

    create_dir(&args.out)?;
    let file = CalibrationFile {
        state: result.state,
        final_loss: result.final_loss,
        iterations: result.iterations_run,
        seed: cfg.seed,
    };
    file.write(&args.out.join(CALIBRATION_FILE))?;
    let history = args.out.join(HISTORY_FILE);
    fs::write(&history, history_csv(&result.loss_history))
        .with_context(|| format!("cannot write {}", history.display()))?;
    println!(
        "{} pairs, {} iterations: loss {:.6e} -> {:.6e}",
        dataset.len(),
        result.iterations_run,
        result.initial_loss,
        result.final_loss
    );
    println!("wrote {}", args.out.join(CALIBRATION_FILE).display());
    Ok(ExitCode::SUCCESS)
}

fn record_paths(i: usize) -> ManifestRecord {
    ManifestRecord {
        rgb: format!("rgb/{i:04}.ppm").into(),
        thermal: format!("thermal/{i:04}.pgm").into(),
        depth: format!("depth/{i:04}.pfm").into(),
    }
}

/// Calibration config matching the rig's lens, so `calibrate` starts from
/// the right initial state.
pub fn synth_config(spec: &SynthSpec) -> CalibrationConfig {
    CalibrationConfig {
        f_manufactured: spec.f_manufactured,
        pixel_pitch: spec.pixel_pitch,
        seed: spec.seed,
        ..Default::default()
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<ExitCode> {
    let mut spec = match &args.config {
        Some(p) => read_synth_spec(p)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let pairs = spec.render()?;
    let gt = spec.ground_truth()?;
    let cfg = synth_config(&spec);

    for dir in ["rgb", "thermal", "depth"] {
        create_dir(&args.out.join(dir))?;
    }
    let mut manifest = DatasetManifest {
        root: args.out.clone(),
        k_rgb: Some(spec.k_rgb),
        records: Vec::with_capacity(pairs.len()),
    };
    for (i, pair) in pairs.iter().enumerate() {
        let record = record_paths(i);
        gradcal::io::write_ppm(&manifest.resolve(&record.rgb), &pair.rgb)?;
        gradcal::io::write_pgm(&manifest.resolve(&record.thermal), &pair.thermal, 65535)?;
        gradcal::io::write_pfm(&manifest.resolve(&record.depth), &pair.depth)?;
        manifest.records.push(record);
    }
    manifest.write(&args.out.join(MANIFEST_FILE))?;

    let gt_loss = if pairs.is_empty() {
        0.0
    } else {
        // Loss of the data as written, after quantization.
        let dataset = manifest.load_dataset()?;
        let options = cfg.loss_options()?;
        let prepared: Vec<PreparedPair> = dataset
            .iter()
            .map(|p| p.prepare(&spec.k_rgb, &options))
            .collect::<gradcal::Result<_>>()?;
        let batch: Vec<&PreparedPair> = prepared.iter().collect();
        batch_loss(&gt, &batch)?
    };
    CalibrationFile {
        state: gt,
        final_loss: gt_loss,
        iterations: 0,
        seed: spec.seed,
    }
    .write(&args.out.join(GROUND_TRUTH_FILE))?;
    let config_path = args.out.join(CONFIG_FILE);
    fs::write(&config_path, gradcal::io::config_to_text(&cfg))
        .with_context(|| format!("cannot write {}", config_path.display()))?;
    println!("wrote {} pairs to {}", pairs.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_overlay(args: &OverlayArgs) -> Result<ExitCode> {
    let cfg = load_config(args.config.as_deref(), &ConfigOverrides::default())?;
    let manifest = DatasetManifest::read(&args.manifest)?;
    let Some(record) = manifest.records.get(args.record) else {
        bail!(
            "record {} out of range: manifest has {} records",
            args.record,
            manifest.records.len()
        );
    };
    let k_rgb = manifest.require_k_rgb()?;
    let calibration = CalibrationFile::read(&args.calibration)?;
    let (rgb, thermal, depth) = manifest.load_record(record)?;
    let images = overlay::render(
        &rgb,
        &thermal,
        &depth,
        &k_rgb,
        &calibration.state,
        &cfg.loss_options()?,
    )?;

    create_dir(&args.out)?;
    gradcal::io::write_ppm(&args.out.join(OVERLAY_FILE), &images.overlay)?;
    gradcal::io::write_pgm(
        &args.out.join(GRADIENT_DIFFERENCE_FILE),
        &images.gradient_difference,
        255,
    )?;
    println!(
        "loss {:.6e} over {} pixels",
        images.loss.loss, images.loss.valid
    );
    println!("wrote {}", args.out.join(OVERLAY_FILE).display());
    Ok(ExitCode::SUCCESS)
}

fn validation_state(
    args: &ValidateArgs,
    cfg: &CalibrationConfig,
    thermal_dims: (usize, usize),
) -> Result<CalibrationState> {
    Ok(match &args.calibration {
        Some(p) => CalibrationFile::read(p)?.state,
        None => initial_state(cfg, thermal_dims.0, thermal_dims.1)?,
    })
}

pub fn cmd_validate_gradients(args: &ValidateArgs) -> Result<ExitCode> {
    let cfg = load_config(args.config.as_deref(), &args.overrides)?;
    let manifest = DatasetManifest::read(&args.manifest)?;
    let k_rgb = manifest.require_k_rgb()?;
    let records = &manifest.records[..cfg.batch_size.min(manifest.records.len())];
    let subset = DatasetManifest {
        records: records.to_vec(),
        ..manifest.clone()
    };
    let dataset = subset.load_dataset()?;
    let Some(first) = dataset.first() else {
        return Err(gradcal::Error::EmptyDataset.into());
    };
    let state = validation_state(args, &cfg, first.thermal.dims())?;
    let options = cfg.loss_options()?;
    let prepared: Vec<PreparedPair> = dataset
        .iter()
        .map(|p| p.prepare(&k_rgb, &options))
        .collect::<gradcal::Result<_>>()?;
    let batch: Vec<&PreparedPair> = prepared.iter().collect();

    let mut report = validate_gradients(&state, &batch, &cfg)?;
    if let Some(name) = &args.corrupt_derivative {
        let Some(i) = PARAM_NAMES.iter().position(|n| n == name) else {
            bail!("unknown parameter {name:?}");
        };
        let mut analytic = report.analytic;
        analytic[i] *= 1.05;
        report = GradientReport::compare(analytic, report.numeric);
    }
    print!("{report}");
    let flagged = report.flagged();
    if flagged.is_empty() {
        println!(
            "all {} components within {:e}",
            PARAM_NAMES.len(),
            report.tolerance
        );
        Ok(ExitCode::SUCCESS)
    } else {
        let names: Vec<&str> = flagged.iter().map(|&i| PARAM_NAMES[i]).collect();
        println!("flagged: {}", names.join(", "));
        Ok(ExitCode::from(1))
    }
}
