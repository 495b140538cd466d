use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gradcal::io::{
    read_config, read_pgm, read_ppm, write_pfm, write_pgm, write_ppm, CalibrationFile,
    DatasetManifest, ManifestRecord,
};
use gradcal::{CalibrationState, DistortionParams, PinholeIntrinsics, Plane, Se3Coordinates};
use tempfile::TempDir;

fn gradcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradcal"))
        .args(args)
        .env("GRADCAL_THREADS", "1")
        .output()
        .expect("run gradcal")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL_RIG: &str = "\
width = 80
height = 64
rgb_fx = 42.5
rgb_fy = 42.5
rgb_cx = 40
rgb_cy = 32
pixel_pitch = 0.024
";

fn synth(dir: &Path, extra: &str) -> PathBuf {
    let rig = dir.join("rig.txt");
    let blur = if extra.contains("blur_sigma") {
        ""
    } else {
        "blur_sigma = 1\n"
    };
    fs::write(&rig, format!("{SMALL_RIG}{blur}{extra}")).unwrap();
    let out = dir.join("data");
    let run = gradcal(&[
        "synth",
        "--config",
        path(&rig),
        "--out",
        path(&out),
        "--seed",
        "3",
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    out
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path(), "pairs = 3\n");
    let manifest = DatasetManifest::read(&data.join("manifest.txt")).unwrap();
    assert_eq!(manifest.records.len(), 3);
    assert_eq!(manifest.require_k_rgb().unwrap().fx, 42.5);
    let pairs = manifest.load_dataset().unwrap();
    assert_eq!(pairs[0].thermal.dims(), (80, 64));
    let header = fs::read(data.join("thermal/0000.pgm")).unwrap();
    assert!(header.starts_with(b"P5\n80 64\n65535\n"));

    let gt = CalibrationFile::read(&data.join("ground_truth.txt")).unwrap();
    assert_eq!(gt.seed, 3);
    assert!(gt.final_loss > 0.0 && gt.final_loss.is_finite());
    let cfg = read_config(&data.join("config.txt")).unwrap();
    assert_eq!(cfg.pixel_pitch, 0.024);
    assert_eq!(cfg.f_manufactured, 0.8);
}

#[test]
fn synth_with_no_pairs_then_calibrate_reports_empty_dataset() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path(), "pairs = 0\n");
    let manifest = DatasetManifest::read(&data.join("manifest.txt")).unwrap();
    assert!(manifest.records.is_empty());
    assert_eq!(
        CalibrationFile::read(&data.join("ground_truth.txt"))
            .unwrap()
            .final_loss,
        0.0
    );

    let run = gradcal(&[
        "calibrate",
        "--manifest",
        path(&data.join("manifest.txt")),
        "--out",
        path(&tmp.path().join("cal")),
    ]);
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr(&run).contains("empty dataset"), "{}", stderr(&run));
}

#[test]
fn synth_rejects_an_empty_scene() {
    let tmp = TempDir::new().unwrap();
    let rig = tmp.path().join("rig.txt");
    fs::write(&rig, format!("{SMALL_RIG}pairs = 1\nscene = empty\n")).unwrap();
    let run = gradcal(&[
        "synth",
        "--config",
        path(&rig),
        "--out",
        path(&tmp.path().join("d")),
    ]);
    assert_eq!(run.status.code(), Some(2));
    assert!(
        stderr(&run).contains("degenerate scene"),
        "{}",
        stderr(&run)
    );
}

#[test]
fn calibrate_writes_outputs_and_flags_override_config() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path(), "pairs = 2\n");
    let config = tmp.path().join("cal.txt");
    let mut cfg = read_config(&data.join("config.txt")).unwrap();
    cfg.iterations = 5;
    cfg.seed = 1;
    fs::write(&config, gradcal::io::config_to_text(&cfg)).unwrap();

    let out = tmp.path().join("cal");
    let run = gradcal(&[
        "calibrate",
        "--manifest",
        path(&data.join("manifest.txt")),
        "--config",
        path(&config),
        "--out",
        path(&out),
        "--iterations",
        "7",
        "--seed",
        "4",
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let cal = CalibrationFile::read(&out.join("calibration.txt")).unwrap();
    assert_eq!(cal.iterations, 7);
    assert_eq!(cal.seed, 4);
    let history = fs::read_to_string(out.join("loss_history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("iteration,loss"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    for (i, row) in rows.iter().enumerate() {
        let (it, loss) = row.split_once(',').unwrap();
        assert_eq!(it.parse::<usize>().unwrap(), i);
        assert!(loss.parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn calibrate_rejects_unknown_modes() {
    let run = gradcal(&[
        "calibrate",
        "--manifest",
        "m",
        "--out",
        "o",
        "--loss-mode",
        "cubic",
    ]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn thread_count_must_be_positive() {
    let out = Command::new(env!("CARGO_BIN_EXE_gradcal"))
        .args(["synth", "--out", "unused"])
        .env("GRADCAL_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("GRADCAL_THREADS"));
}

fn mean(img: &gradcal::GrayImage) -> f64 {
    img.as_slice().iter().map(|&x| x as f64).sum::<f64>() / img.len() as f64
}

fn overlay(data: &Path, calibration: &Path, out: &Path) -> (gradcal::RgbImage, gradcal::GrayImage) {
    let run = gradcal(&[
        "overlay",
        "--manifest",
        path(&data.join("manifest.txt")),
        "--record",
        "1",
        "--calibration",
        path(calibration),
        "--out",
        path(out),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    (
        read_ppm(&out.join("overlay.ppm")).unwrap(),
        read_pgm(&out.join("gradient_difference.pgm")).unwrap(),
    )
}

#[test]
fn overlay_is_quiet_at_ground_truth_and_loud_when_misaligned() {
    let tmp = TempDir::new().unwrap();
    // Band-limited renders; sharp edges sampled at two resolutions leave
    // a residual gradient difference even at ground truth.
    let data = synth(tmp.path(), "pairs = 2\nblur_sigma = 2\n");
    let gt_path = data.join("ground_truth.txt");
    let (img, diff) = overlay(&data, &gt_path, &tmp.path().join("gt"));
    assert_eq!(img.dims(), (80, 64));
    let at_gt = mean(&diff);
    assert!(at_gt < 2.0 / 255.0, "mean gradient difference {at_gt}");

    let mut off = CalibrationFile::read(&gt_path).unwrap();
    off.state.intrinsics.cx += 3.0;
    off.state.xi.v.x += 0.2;
    let off_path = tmp.path().join("off.txt");
    off.write(&off_path).unwrap();
    let (_, diff) = overlay(&data, &off_path, &tmp.path().join("off"));
    assert!(mean(&diff) > 2.0 * at_gt, "{} vs {at_gt}", mean(&diff));

    let run = gradcal(&[
        "overlay",
        "--manifest",
        path(&data.join("manifest.txt")),
        "--record",
        "9",
        "--calibration",
        path(&gt_path),
        "--out",
        path(&tmp.path().join("x")),
    ]);
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr(&run).contains("out of range"));
}

#[test]
fn identity_overlay_of_identical_images_reproduces_the_input() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    let (w, h) = (40, 30);
    let values = Plane::from_fn(w, h, |u, v| ((u * 7 + v * 13) % 256) as f32 / 255.0);
    let rgb = values.map(|&x| [x; 3]);
    write_ppm(&root.join("rgb.ppm"), &rgb).unwrap();
    write_pgm(&root.join("thermal.pgm"), &values, 255).unwrap();
    write_pfm(&root.join("depth.pfm"), &Plane::filled(w, h, 4.0)).unwrap();
    let k = PinholeIntrinsics::new(30.0, 30.0, 20.0, 15.0).unwrap();
    DatasetManifest {
        root: root.to_path_buf(),
        k_rgb: Some(k),
        records: vec![ManifestRecord {
            rgb: "rgb.ppm".into(),
            thermal: "thermal.pgm".into(),
            depth: "depth.pfm".into(),
        }],
    }
    .write(&root.join("manifest.txt"))
    .unwrap();
    CalibrationFile {
        state: CalibrationState {
            xi: Se3Coordinates::zero(),
            intrinsics: k,
            distortion: DistortionParams::default(),
        },
        final_loss: 0.0,
        iterations: 0,
        seed: 0,
    }
    .write(&root.join("identity.txt"))
    .unwrap();

    let out = root.join("out");
    let run = gradcal(&[
        "overlay",
        "--manifest",
        path(&root.join("manifest.txt")),
        "--calibration",
        path(&root.join("identity.txt")),
        "--out",
        path(&out),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let img = read_ppm(&out.join("overlay.ppm")).unwrap();
    let diff = read_pgm(&out.join("gradient_difference.pgm")).unwrap();
    let mut valid = 0;
    for v in 0..h {
        for u in 0..w {
            let px = *img.get(u, v);
            if px == [1.0, 0.0, 1.0] {
                continue;
            }
            valid += 1;
            assert_eq!(px, [*values.get(u, v); 3], "pixel ({u}, {v})");
            assert_eq!(*diff.get(u, v), 0.0);
        }
    }
    assert!(valid > w * h / 3, "only {valid} valid pixels");
}

#[test]
fn validate_gradients_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path(), "pairs = 2\nblur_sigma = 2\n");
    let manifest = data.join("manifest.txt");
    let config = data.join("config.txt");
    let base = [
        "validate-gradients",
        "--manifest",
        path(&manifest),
        "--config",
        path(&config),
    ];

    let run = gradcal(&base);
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stdout)
    );

    let mut corrupt = base.to_vec();
    corrupt.extend(["--corrupt-derivative", "fx"]);
    let run = gradcal(&corrupt);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stdout).contains("flagged: fx"));

    let mut numeric = base.to_vec();
    numeric.extend(["--gradient-mode", "numeric"]);
    let run = gradcal(&numeric);
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr(&run).contains("analytic mode required"));
}

#[test]
fn zero_iterations_writes_the_initial_state() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path(), "pairs = 2\n");
    let out = tmp.path().join("cal");
    let run = gradcal(&[
        "calibrate",
        "--manifest",
        path(&data.join("manifest.txt")),
        "--config",
        path(&data.join("config.txt")),
        "--out",
        path(&out),
        "--iterations",
        "0",
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let cal = CalibrationFile::read(&out.join("calibration.txt")).unwrap();
    let cfg = read_config(&data.join("config.txt")).unwrap();
    assert_eq!(
        cal.state,
        gradcal::optim::initial_state(&cfg, 80, 64).unwrap()
    );
    assert_eq!(cal.iterations, 0);
}
