//! Optimizer and synthetic-rig configuration files, in the same
//! `key = value` dialect as the calibration file. Absent keys keep their
//! defaults; unknown keys are an error.

use std::fmt::Write as _;
use std::path::Path;

use super::kv::{format_f64, KeyValueDocument};
use crate::error::{Error, Result};
use crate::optim::CalibrationConfig;
use crate::synth::SynthSpec;

const CONFIG_KEYS: &[&str] = &[
    "iterations",
    "batch_size",
    "pair_pool",
    "lr0",
    "halve_every",
    "seed",
    "gradient_mode",
    "loss_mode",
    "distortion_mode",
    "f_manufactured",
    "pixel_pitch",
    "smoothing_sigma",
    "smoothing_taps",
    "normalize_intrinsics",
];

macro_rules! overlay {
    ($doc:expr, $target:expr, $($field:ident),+ $(,)?) => {
        $(
            if let Some(v) = $doc.get(stringify!($field))? {
                $target.$field = v;
            }
        )+
    };
}

pub fn config_from_document(doc: &KeyValueDocument) -> Result<CalibrationConfig> {
    doc.reject_unknown(CONFIG_KEYS)?;
    let mut cfg = CalibrationConfig::default();
    overlay!(
        doc,
        cfg,
        iterations,
        batch_size,
        pair_pool,
        lr0,
        halve_every,
        seed,
        gradient_mode,
        loss_mode,
        distortion_mode,
        f_manufactured,
        pixel_pitch,
        smoothing_sigma,
        smoothing_taps,
        normalize_intrinsics,
    );
    cfg.validate().map_err(|e| Error::Format {
        path: doc.path().to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<CalibrationConfig> {
    config_from_document(&KeyValueDocument::read(path)?)
}

pub fn config_to_text(cfg: &CalibrationConfig) -> String {
    let mut out = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    put("iterations", cfg.iterations.to_string());
    put("batch_size", cfg.batch_size.to_string());
    put("pair_pool", cfg.pair_pool.to_string());
    put("lr0", format_f64(cfg.lr0));
    put("halve_every", cfg.halve_every.to_string());
    put("seed", cfg.seed.to_string());
    put("gradient_mode", cfg.gradient_mode.to_string());
    put("loss_mode", cfg.loss_mode.to_string());
    put("distortion_mode", cfg.distortion_mode.to_string());
    put("f_manufactured", format_f64(cfg.f_manufactured));
    put("pixel_pitch", format_f64(cfg.pixel_pitch));
    put("smoothing_sigma", format_f64(cfg.smoothing_sigma));
    put("smoothing_taps", cfg.smoothing_taps.to_string());
    put("normalize_intrinsics", cfg.normalize_intrinsics.to_string());
    out
}

const SYNTH_KEYS: &[&str] = &[
    "pairs",
    "seed",
    "width",
    "height",
    "rgb_fx",
    "rgb_fy",
    "rgb_cx",
    "rgb_cy",
    "f_manufactured",
    "pixel_pitch",
    "rotation_deg",
    "translation",
    "focal_error",
    "k1",
    "noise_sigma",
    "blur_sigma",
    "invert_polarity",
    "scene",
];

pub fn synth_spec_from_document(doc: &KeyValueDocument) -> Result<SynthSpec> {
    doc.reject_unknown(SYNTH_KEYS)?;
    let mut s = SynthSpec::default();
    overlay!(
        doc,
        s,
        pairs,
        seed,
        width,
        height,
        f_manufactured,
        pixel_pitch,
        noise_sigma,
        blur_sigma,
        invert_polarity,
    );
    for (key, field) in [
        ("rgb_fx", &mut s.k_rgb.fx),
        ("rgb_fy", &mut s.k_rgb.fy),
        ("rgb_cx", &mut s.k_rgb.cx),
        ("rgb_cy", &mut s.k_rgb.cy),
        ("rotation_deg", &mut s.perturbation.rotation_deg),
        ("translation", &mut s.perturbation.translation),
        ("focal_error", &mut s.perturbation.focal),
        ("k1", &mut s.perturbation.k1),
    ] {
        if let Some(v) = doc.get(key)? {
            *field = v;
        }
    }
    if let Some(scene) = doc.get::<String>("scene")? {
        s.empty_scene = match scene.as_str() {
            "room" => false,
            "empty" => true,
            other => {
                return Err(Error::Format {
                    path: doc.path().to_path_buf(),
                    message: format!("scene must be room or empty, got {other:?}"),
                })
            }
        };
    }
    if s.width < 3 || s.height < 3 {
        return Err(Error::Format {
            path: doc.path().to_path_buf(),
            message: format!("image size {}x{} is too small", s.width, s.height),
        });
    }
    Ok(s)
}

pub fn read_synth_spec(path: &Path) -> Result<SynthSpec> {
    synth_spec_from_document(&KeyValueDocument::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossMode;
    use crate::optim::GradientMode;

    fn doc(text: &str) -> KeyValueDocument {
        KeyValueDocument::parse(text, "cfg").unwrap()
    }

    #[test]
    fn defaults_and_overrides() {
        let cfg = config_from_document(&doc("")).unwrap();
        assert_eq!(cfg, CalibrationConfig::default());
        let cfg = config_from_document(&doc(
            "iterations = 0\nloss_mode = magnitude\ngradient_mode = numeric\nlr0 = 0.01\nnormalize_intrinsics = false\n",
        ))
        .unwrap();
        assert_eq!(cfg.iterations, 0);
        assert_eq!(cfg.loss_mode, LossMode::Magnitude);
        assert_eq!(cfg.gradient_mode, GradientMode::Numeric);
        assert_eq!(cfg.lr0, 0.01);
        assert!(!cfg.normalize_intrinsics);
    }

    #[test]
    fn text_round_trip() {
        let cfg = CalibrationConfig {
            seed: 99,
            lr0: 3e-4,
            loss_mode: LossMode::Magnitude,
            ..Default::default()
        };
        let text = config_to_text(&cfg);
        assert_eq!(config_from_document(&doc(&text)).unwrap(), cfg);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(config_from_document(&doc("batch_size = 0\n")).is_err());
        assert!(config_from_document(&doc("itertions = 5\n")).is_err());
        assert!(config_from_document(&doc("loss_mode = fancy\n")).is_err());
        assert!(config_from_document(&doc("pixel_pitch = 0\n")).is_err());
    }

    #[test]
    fn synth_spec_overrides() {
        let s = synth_spec_from_document(&doc(
            "pairs = 0\nseed = 5\nrgb_fx = 150\nk1 = 0.02\nscene = empty\n",
        ))
        .unwrap();
        assert_eq!(s.pairs, 0);
        assert_eq!(s.seed, 5);
        assert_eq!(s.k_rgb.fx, 150.0);
        assert_eq!(s.perturbation.k1, 0.02);
        assert!(s.empty_scene);
        assert!(synth_spec_from_document(&doc("scene = cave\n")).is_err());
    }
}
