use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{DistortionParams, PinholeIntrinsics, Se3Coordinates};
use crate::image_ops::GaussianKernel;
use crate::loss::{DistortionMode, LossMode, LossOptions};

pub const NUM_PARAMS: usize = 14;

/// Names of the flattened parameters, in vector order.
pub const PARAM_NAMES: [&str; NUM_PARAMS] = [
    "xi_v0", "xi_v1", "xi_v2", "xi_w0", "xi_w1", "xi_w2", "fx", "fy", "cx", "cy", "k1", "k2", "p1",
    "p2",
];

/// Value given to the pose and distortion entries of the initial state.
pub const INITIAL_EPSILON: f64 = 1e-4;

/// Everything the optimizer estimates: the RGB-to-thermal pose, the thermal
/// intrinsics and the thermal lens distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationState {
    pub xi: Se3Coordinates,
    pub intrinsics: PinholeIntrinsics,
    pub distortion: DistortionParams,
}

impl CalibrationState {
    pub fn to_params(&self) -> [f64; NUM_PARAMS] {
        let [v0, v1, v2, w0, w1, w2] = self.xi.to_array();
        let k = &self.intrinsics;
        let d = &self.distortion;
        [
            v0, v1, v2, w0, w1, w2, k.fx, k.fy, k.cx, k.cy, d.k1, d.k2, d.p1, d.p2,
        ]
    }

    /// Inverse of [`to_params`](Self::to_params). No validation happens
    /// here; the loss rejects non-positive focal lengths.
    pub fn from_params(p: &[f64; NUM_PARAMS]) -> Self {
        Self {
            xi: Se3Coordinates::new(
                Vector3::new(p[0], p[1], p[2]),
                Vector3::new(p[3], p[4], p[5]),
            ),
            intrinsics: PinholeIntrinsics {
                fx: p[6],
                fy: p[7],
                cx: p[8],
                cy: p[9],
            },
            distortion: DistortionParams::new(p[10], p[11], p[12], p[13]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_params().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    #[default]
    Analytic,
    Numeric,
}

impl std::str::FromStr for GradientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(Self::Analytic),
            "numeric" => Ok(Self::Numeric),
            _ => Err(Error::InvalidParameter(format!(
                "gradient mode must be analytic or numeric, got {s:?}"
            ))),
        }
    }
}

impl std::fmt::Display for GradientMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Analytic => "analytic",
            Self::Numeric => "numeric",
        })
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signed" => Ok(Self::Signed),
            "magnitude" => Ok(Self::Magnitude),
            _ => Err(Error::InvalidParameter(format!(
                "loss mode must be signed or magnitude, got {s:?}"
            ))),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Signed => "signed",
            Self::Magnitude => "magnitude",
        })
    }
}

impl std::str::FromStr for DistortionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "composed" => Ok(Self::Composed),
            "two-pass" => Ok(Self::TwoPass),
            _ => Err(Error::InvalidParameter(format!(
                "distortion mode must be composed or two-pass, got {s:?}"
            ))),
        }
    }
}

impl std::fmt::Display for DistortionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Composed => "composed",
            Self::TwoPass => "two-pass",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub pair_pool: usize,
    pub lr0: f64,
    pub halve_every: usize,
    pub seed: u64,
    pub gradient_mode: GradientMode,
    pub loss_mode: LossMode,
    pub distortion_mode: DistortionMode,
    /// Nominal lens focal length in mm.
    pub f_manufactured: f64,
    /// Sensor pixel pitch in mm.
    pub pixel_pitch: f64,
    pub smoothing_sigma: f64,
    pub smoothing_taps: usize,
    /// Take Adam steps on `fx, fy, cx, cy` divided by the initial focal
    /// length instead of in raw pixels.
    pub normalize_intrinsics: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            iterations: 8000,
            batch_size: 10,
            pair_pool: 600,
            lr0: 1e-3,
            halve_every: 500,
            seed: 0,
            gradient_mode: GradientMode::Analytic,
            loss_mode: LossMode::Signed,
            distortion_mode: DistortionMode::Composed,
            f_manufactured: 4.0,
            pixel_pitch: 0.012,
            smoothing_sigma: 3.0,
            smoothing_taps: 51,
            normalize_intrinsics: true,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidParameter(m));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.pair_pool == 0 {
            return fail("pair_pool must be at least 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail(format!("lr0 must be positive, got {}", self.lr0));
        }
        if self.halve_every == 0 {
            return fail("halve_every must be at least 1".into());
        }
        if !(self.f_manufactured > 0.0 && self.f_manufactured.is_finite()) {
            return fail(format!(
                "f_manufactured must be positive, got {}",
                self.f_manufactured
            ));
        }
        if !(self.pixel_pitch > 0.0 && self.pixel_pitch.is_finite()) {
            return fail(format!(
                "pixel_pitch must be positive, got {}",
                self.pixel_pitch
            ));
        }
        self.loss_options().map(|_| ())
    }

    pub fn loss_options(&self) -> Result<LossOptions> {
        Ok(LossOptions {
            kernel: GaussianKernel::new(self.smoothing_sigma, self.smoothing_taps)?,
            mode: self.loss_mode,
            distortion: self.distortion_mode,
        })
    }
}

/// Starting point of the optimization: a focal length from the lens and
/// pixel pitch, the principal point at the image center, and small nonzero
/// pose and distortion entries so no gradient starts out exactly zero.
pub fn initial_state(
    cfg: &CalibrationConfig,
    width: usize,
    height: usize,
) -> Result<CalibrationState> {
    for (name, value) in [
        ("f_manufactured", cfg.f_manufactured),
        ("pixel_pitch", cfg.pixel_pitch),
    ] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "{name} must be positive, got {value}"
            )));
        }
    }
    let f = cfg.f_manufactured / cfg.pixel_pitch;
    let e = INITIAL_EPSILON;
    Ok(CalibrationState {
        xi: Se3Coordinates::from_array([e; 6]),
        intrinsics: PinholeIntrinsics::new(f, f, width as f64 / 2.0, height as f64 / 2.0)?,
        distortion: DistortionParams::new(e, e, e, e),
    })
}

/// Result of a [`calibrate`](super::calibrate) run.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub state: CalibrationState,
    /// Mean loss of the final state over the distinct pairs of the pool.
    pub final_loss: f64,
    /// Same quantity for the initial state.
    pub initial_loss: f64,
    /// Batch loss before each update.
    pub loss_history: Vec<f64>,
    pub iterations_run: usize,
}
