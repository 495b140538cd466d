//! Target-less calibration of a thermal camera against a calibrated RGB
//! camera with per-pixel depth.
//!
//! The thermal image is warped into the RGB frame through a displacement
//! map built from the RGB depth, the rigid transform between the cameras,
//! the thermal intrinsics, and a four-parameter lens distortion. The
//! calibration minimizes the squared, Gaussian-smoothed difference between
//! the image gradients of the RGB image and of the warped thermal image,
//! using Adam on the 14 calibration parameters.
//!
//! Module map:
//!
//! * [`geometry`]: pinhole projection, distortion, the se(3) exponential map,
//!   and displacement maps.
//! * [`image`]: dense image planes and their constructors.
//! * [`image_ops`]: grayscale, Sobel gradients, Gaussian smoothing, bilinear
//!   warping.
//! * [`loss`]: the gradient-alignment loss and its analytic derivative.
//! * [`optim`]: calibration state, Adam, learning-rate schedule, gradient
//!   validation and the end-to-end [`calibrate`](optim::calibrate) driver.
//! * [`adaptation`]: segmentation / domain-discriminator training losses.
//! * [`synth`]: synthetic RGB-thermal rig renderer and recovery-error oracle.
//! * [`io`]: Netpbm/PFM/PNG images, key-value calibration and config files,
//!   dataset manifests.

pub mod adaptation;
pub mod error;
pub mod geometry;
pub mod image;
pub mod image_ops;
pub mod io;
pub mod loss;
pub mod optim;
pub mod synth;

pub use crate::error::{Error, Result};
pub use crate::geometry::{
    DisplacementMap, DistortionParams, PinholeIntrinsics, RigidTransform, Se3Coordinates,
};
pub use crate::image::{DepthMap, GrayImage, MaskImage, Plane, RgbImage};
pub use crate::image_ops::{GaussianKernel, GradientPair};
pub use crate::loss::{DistortionMode, LossMode, LossOptions, LossValue, PreparedPair};
pub use crate::optim::{
    CalibrationConfig, CalibrationPair, CalibrationResult, CalibrationState, GradientMode,
};
pub use crate::synth::{Perturbation, RecoveryError, RenderedPair, SynthSpec, SyntheticRig};
