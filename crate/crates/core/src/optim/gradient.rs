use rayon::prelude::*;

use super::state::{CalibrationConfig, CalibrationState, GradientMode, NUM_PARAMS, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::geometry::PinholeIntrinsics;
use crate::image::{DepthMap, GrayImage};
use crate::loss::{LossOptions, PreparedPair};

/// Relative error above which a gradient component is flagged.
pub const GRADIENT_TOLERANCE: f64 = 1e-3;

/// Denominator floor of [`relative_error`], so two vanishing derivatives
/// compare as equal.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-10;

/// One grayscale RGB image, the thermal image, and the depth map registered
/// to the RGB image.
#[derive(Debug, Clone)]
pub struct CalibrationPair {
    pub rgb: GrayImage,
    pub thermal: GrayImage,
    pub depth: DepthMap,
}

impl CalibrationPair {
    pub fn prepare(
        &self,
        k_rgb: &PinholeIntrinsics,
        options: &LossOptions,
    ) -> Result<PreparedPair> {
        PreparedPair::new(
            &self.rgb,
            &self.thermal,
            &self.depth,
            k_rgb,
            options.clone(),
        )
    }
}

/// Mean loss over the batch. Pairs are evaluated in parallel and summed in
/// batch order.
pub fn batch_loss(state: &CalibrationState, batch: &[&PreparedPair]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|p| p.loss(state).map(|l| l.loss))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

/// Mean loss over the batch and its gradient.
pub fn loss_gradient(
    state: &CalibrationState,
    batch: &[&PreparedPair],
    mode: GradientMode,
) -> Result<(f64, [f64; NUM_PARAMS])> {
    match mode {
        GradientMode::Analytic => analytic_gradient(state, batch),
        GradientMode::Numeric => Ok((batch_loss(state, batch)?, numeric_gradient(state, batch)?)),
    }
}

fn analytic_gradient(
    state: &CalibrationState,
    batch: &[&PreparedPair],
) -> Result<(f64, [f64; NUM_PARAMS])> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let terms: Vec<(f64, [f64; NUM_PARAMS])> = batch
        .par_iter()
        .map(|p| p.loss_and_gradient(state).map(|(l, g)| (l.loss, g)))
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = [0.0; NUM_PARAMS];
    for (l, g) in &terms {
        loss += l;
        for i in 0..NUM_PARAMS {
            grad[i] += g[i];
        }
    }
    Ok((loss / n, grad.map(|g| g / n)))
}

/// Central-difference step for a parameter of value `theta`.
pub fn difference_step(theta: f64) -> f64 {
    (1e-6 * theta.abs()).max(1e-6)
}

pub fn numeric_gradient(
    state: &CalibrationState,
    batch: &[&PreparedPair],
) -> Result<[f64; NUM_PARAMS]> {
    let base = state.to_params();
    let mut grad = [0.0; NUM_PARAMS];
    for i in 0..NUM_PARAMS {
        let h = difference_step(base[i]);
        let mut plus = base;
        let mut minus = base;
        plus[i] += h;
        minus[i] -= h;
        let lp = batch_loss(&CalibrationState::from_params(&plus), batch)?;
        let lm = batch_loss(&CalibrationState::from_params(&minus), batch)?;
        grad[i] = (lp - lm) / (plus[i] - minus[i]);
    }
    Ok(grad)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub analytic: [f64; NUM_PARAMS],
    pub numeric: [f64; NUM_PARAMS],
    pub relative_error: [f64; NUM_PARAMS],
    pub tolerance: f64,
}

impl GradientReport {
    pub fn compare(analytic: [f64; NUM_PARAMS], numeric: [f64; NUM_PARAMS]) -> Self {
        Self {
            analytic,
            numeric,
            relative_error: std::array::from_fn(|i| relative_error(analytic[i], numeric[i])),
            tolerance: GRADIENT_TOLERANCE,
        }
    }

    /// Indices of components whose relative error exceeds the tolerance.
    pub fn flagged(&self) -> Vec<usize> {
        (0..NUM_PARAMS)
            .filter(|&i| !(self.relative_error[i] < self.tolerance))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.flagged().is_empty()
    }

    pub fn max_error(&self) -> f64 {
        self.relative_error.iter().copied().fold(0.0, f64::max)
    }
}

impl std::fmt::Display for GradientReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{:<6} {:>16} {:>16} {:>11}",
            "param", "analytic", "numeric", "rel_error"
        )?;
        for i in 0..NUM_PARAMS {
            let mark = if self.relative_error[i] < self.tolerance {
                ""
            } else {
                "  FLAGGED"
            };
            writeln!(
                f,
                "{:<6} {:>16.8e} {:>16.8e} {:>11.3e}{mark}",
                PARAM_NAMES[i], self.analytic[i], self.numeric[i], self.relative_error[i]
            )?;
        }
        Ok(())
    }
}

/// Compares the analytic gradient against central differences.
pub fn validate_gradients(
    state: &CalibrationState,
    batch: &[&PreparedPair],
    cfg: &CalibrationConfig,
) -> Result<GradientReport> {
    if cfg.gradient_mode != GradientMode::Analytic {
        return Err(Error::AnalyticModeRequired(format!(
            "gradient_mode is {}",
            cfg.gradient_mode
        )));
    }
    let (_, analytic) = analytic_gradient(state, batch)?;
    let numeric = numeric_gradient(state, batch)?;
    Ok(GradientReport::compare(analytic, numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DistortionParams, Se3Coordinates};
    use crate::image::Plane;
    use crate::loss::LossOptions;

    fn k() -> PinholeIntrinsics {
        PinholeIntrinsics::new(40.0, 40.0, 23.5, 17.5).unwrap()
    }

    fn pattern(u: usize, v: usize) -> f32 {
        let (x, y) = (u as f64, v as f64);
        (0.5 + 0.2 * (0.31 * x).sin() * (0.23 * y).cos() + 0.1 * (0.17 * x + 0.11 * y).sin()) as f32
    }

    fn pair() -> PreparedPair {
        let img = Plane::from_fn(48, 36, pattern);
        let depth = DepthMap::filled(48, 36, 3.0);
        let options = LossOptions {
            kernel: crate::image_ops::GaussianKernel::new(1.5, 9).unwrap(),
            ..Default::default()
        };
        PreparedPair::new(&img, &img, &depth, &k(), options).unwrap()
    }

    fn aligned() -> CalibrationState {
        CalibrationState {
            xi: Se3Coordinates::zero(),
            intrinsics: k(),
            distortion: DistortionParams::default(),
        }
    }

    #[test]
    fn aligned_identical_images_have_zero_gradient() {
        let p = pair();
        let (loss, g) = loss_gradient(&aligned(), &[&p], GradientMode::Analytic).unwrap();
        assert!(loss < 1e-24);
        assert!(g.iter().all(|c| c.abs() < 1e-10), "{g:?}");
    }

    #[test]
    fn empty_batch_is_an_error() {
        for mode in [GradientMode::Analytic, GradientMode::Numeric] {
            assert!(matches!(
                loss_gradient(&aligned(), &[], mode),
                Err(Error::EmptyBatch)
            ));
        }
    }

    #[test]
    fn analytic_matches_central_differences_on_smooth_images() {
        let p = pair();
        let mut state = aligned();
        state.xi = Se3Coordinates::from_array([0.02, -0.01, 0.03, 0.004, -0.006, 0.003]);
        state.intrinsics.fx = 41.0;
        state.intrinsics.cx = 24.1;
        state.distortion = DistortionParams::new(0.02, -0.01, 0.002, -0.001);
        let report = validate_gradients(&state, &[&p, &p], &CalibrationConfig::default()).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn corrupted_component_is_flagged() {
        let analytic: [f64; NUM_PARAMS] = std::array::from_fn(|i| 1.0 + i as f64);
        let mut numeric = analytic;
        numeric[4] *= 1.01;
        let report = GradientReport::compare(analytic, numeric);
        assert_eq!(report.flagged(), vec![4]);
        assert!(!report.passed());
        assert!(report
            .to_string()
            .lines()
            .nth(5)
            .unwrap()
            .ends_with("FLAGGED"));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        approx::assert_relative_eq!(relative_error(1e-14, 0.0), 1e-4, max_relative = 1e-12);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
    }

    #[test]
    fn numeric_mode_cannot_be_validated() {
        let p = pair();
        let cfg = CalibrationConfig {
            gradient_mode: GradientMode::Numeric,
            ..Default::default()
        };
        assert!(matches!(
            validate_gradients(&aligned(), &[&p], &cfg),
            Err(Error::AnalyticModeRequired(_))
        ));
    }

    #[test]
    fn difference_step_scales_with_magnitude() {
        assert_eq!(difference_step(0.0), 1e-6);
        assert_eq!(difference_step(-0.5), 1e-6);
        approx::assert_relative_eq!(difference_step(200.0), 2e-4, max_relative = 1e-12);
    }
}
