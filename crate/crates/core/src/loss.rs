//! The gradient-alignment calibration loss.
//!
//! For a calibration state the thermal image is warped into the RGB frame,
//! both images are differentiated with the Sobel operator, the difference of
//! gradients is smoothed with a wide Gaussian, squared, and averaged over the
//! valid pixels:
//!
//! ```text
//! L = 1/|M| * sum_{p in M} | G * (grad I_rgb - grad S(I_t, F)) |^2 (p)
//! ```
//!
//! `M` holds the pixels whose warp sample was valid, eroded by the kernel
//! radius plus the Sobel footprint so no smoothed value sees an invalid
//! sample. The smoothing is linear, so the RGB term `G * grad I_rgb` is
//! computed once per pair in [`PreparedPair::new`].
//!
//! [`PreparedPair::loss_and_gradient`] differentiates `L` in reverse mode:
//! the adjoint of the smoothing, of the Sobel operator, the bilinear sample
//! derivatives, and the chain through distortion, projection and the se(3)
//! exponential.

use nalgebra::{RowVector2, RowVector3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{self, ExpJacobian, PinholeIntrinsics};
use crate::image::{DepthMap, GrayImage, MaskImage, Plane};
use crate::image_ops::{self, GaussianKernel};
use crate::optim::{CalibrationState, NUM_PARAMS};

/// How image gradients of the two modalities are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    /// Per-component difference of the signed `(gx, gy)` channels.
    #[default]
    Signed,
    /// Difference of gradient magnitudes; insensitive to contrast polarity.
    Magnitude,
}

/// Where lens distortion enters the warp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistortionMode {
    /// Distortion is part of the projection; the thermal image is resampled
    /// once.
    #[default]
    Composed,
    /// The thermal image is first undistorted on its own pixel grid, then
    /// warped with a pinhole displacement map (two resampling passes).
    TwoPass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOptions {
    pub kernel: GaussianKernel,
    pub mode: LossMode,
    pub distortion: DistortionMode,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            kernel: GaussianKernel::new(3.0, 51).expect("valid default kernel"),
            mode: LossMode::Signed,
            distortion: DistortionMode::Composed,
        }
    }
}

impl LossOptions {
    /// Erosion radius applied to the valid-sample mask.
    pub fn mask_margin(&self) -> usize {
        self.kernel.radius() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    /// Pixels that contributed to the mean.
    pub valid: usize,
}

/// Per-pixel images describing the alignment at one state.
#[derive(Debug, Clone)]
pub struct AlignmentImages {
    /// Thermal image resampled into the RGB frame.
    pub warped: GrayImage,
    /// Pixels with a valid warp sample.
    pub mask: MaskImage,
    /// `|grad I_rgb - grad W|` before smoothing; zero outside `mask`.
    pub gradient_difference: GrayImage,
    pub loss: LossValue,
}

/// One RGB/thermal/depth triple with everything that does not depend on the
/// calibration state precomputed.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    width: usize,
    height: usize,
    rgb: Vec<f64>,
    /// Backprojected RGB pixels; `None` where the depth is invalid.
    points: Vec<Option<Vector3<f64>>>,
    thermal: Vec<f64>,
    thermal_width: usize,
    thermal_height: usize,
    /// `G * grad I_rgb`: two channels (signed) or one (magnitude).
    reference: Vec<Vec<f64>>,
    options: LossOptions,
}

struct Forward {
    loss: LossValue,
    sample_valid: Vec<bool>,
    /// `(dW/dx, dW/dy)` of each valid sample.
    sample_slope: Vec<[f64; 2]>,
    warped: Vec<f64>,
    /// Sobel of the warped image.
    gwx: Vec<f64>,
    gwy: Vec<f64>,
    /// `G * grad I_rgb - G * grad W`, per channel.
    residual: Vec<Vec<f64>>,
    mask: Vec<bool>,
}

impl PreparedPair {
    pub fn new(
        rgb: &GrayImage,
        thermal: &GrayImage,
        depth: &DepthMap,
        k_rgb: &PinholeIntrinsics,
        options: LossOptions,
    ) -> Result<Self> {
        rgb.ensure_same_dims(depth, "RGB image vs depth map")?;
        k_rgb.validate()?;
        let (w, h) = rgb.dims();
        let (tw, th) = thermal.dims();
        for (width, height) in [(w, h), (tw, th)] {
            if width < 3 || height < 3 {
                return Err(Error::ImageTooSmall {
                    width,
                    height,
                    min: 3,
                });
            }
        }
        let rgb_f: Vec<f64> = rgb.as_slice().iter().map(|&x| x as f64).collect();
        let mut points = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                let p = Vector2::new(u as f64, v as f64);
                points.push(geometry::backproject(p, k_rgb, *depth.get(u, v) as f64).ok());
            }
        }
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        image_ops::sobel(&rgb_f, w, h, &mut gx, &mut gy);
        let channels = match options.mode {
            LossMode::Signed => vec![gx, gy],
            LossMode::Magnitude => vec![gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect()],
        };
        let reference = channels
            .iter()
            .map(|c| {
                let mut out = vec![0.0; w * h];
                image_ops::convolve_separable(c, w, h, options.kernel.weights(), &mut out);
                out
            })
            .collect();
        Ok(Self {
            width: w,
            height: h,
            rgb: rgb_f,
            points,
            thermal: thermal.as_slice().iter().map(|&x| x as f64).collect(),
            thermal_width: tw,
            thermal_height: th,
            reference,
            options,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn thermal_dims(&self) -> (usize, usize) {
        (self.thermal_width, self.thermal_height)
    }

    pub fn options(&self) -> &LossOptions {
        &self.options
    }

    pub fn loss(&self, state: &CalibrationState) -> Result<LossValue> {
        Ok(self.forward(state)?.loss)
    }

    /// Loss and its gradient with respect to the 14 calibration parameters.
    /// Only available for [`DistortionMode::Composed`].
    pub fn loss_and_gradient(
        &self,
        state: &CalibrationState,
    ) -> Result<(LossValue, [f64; NUM_PARAMS])> {
        if self.options.distortion != DistortionMode::Composed {
            return Err(Error::AnalyticModeRequired(
                "analytic gradients exist only for composed distortion".into(),
            ));
        }
        let fwd = self.forward(state)?;
        let grad = self.backward(state, &fwd);
        Ok((fwd.loss, grad))
    }

    pub fn alignment_images(&self, state: &CalibrationState) -> Result<AlignmentImages> {
        let fwd = self.forward(state)?;
        let (w, h) = (self.width, self.height);
        let mut rgx = vec![0.0; w * h];
        let mut rgy = vec![0.0; w * h];
        image_ops::sobel(&self.rgb, w, h, &mut rgx, &mut rgy);
        let diff = (0..w * h)
            .map(|i| {
                if fwd.sample_valid[i] {
                    (rgx[i] - fwd.gwx[i]).hypot(rgy[i] - fwd.gwy[i]) as f32
                } else {
                    0.0
                }
            })
            .collect();
        Ok(AlignmentImages {
            warped: Plane::from_vec(w, h, fwd.warped.iter().map(|&x| x as f32).collect())?,
            mask: Plane::from_vec(w, h, fwd.sample_valid.clone())?,
            gradient_difference: Plane::from_vec(w, h, diff)?,
            loss: fwd.loss,
        })
    }

    fn warp_composed(&self, state: &CalibrationState) -> (Vec<f64>, Vec<bool>, Vec<[f64; 2]>) {
        let n = self.width * self.height;
        let transform = geometry::exp_se3(&state.xi);
        let mut warped = vec![0.0; n];
        let mut valid = vec![false; n];
        let mut slope = vec![[0.0; 2]; n];
        for (i, point) in self.points.iter().enumerate() {
            let Some(x) = point else { continue };
            let xt = transform.transform_point(x);
            let Some(pt) = geometry::project_distorted(&xt, &state.intrinsics, &state.distortion)
            else {
                continue;
            };
            if let Some(s) = image_ops::bilinear(
                &self.thermal,
                self.thermal_width,
                self.thermal_height,
                pt.x,
                pt.y,
            ) {
                warped[i] = s.value;
                valid[i] = true;
                slope[i] = [s.dx, s.dy];
            }
        }
        (warped, valid, slope)
    }

    fn warp_two_pass(&self, state: &CalibrationState) -> (Vec<f64>, Vec<bool>) {
        let (tw, th) = (self.thermal_width, self.thermal_height);
        let k = &state.intrinsics;
        // Pass 1: undistorted thermal image on the thermal grid.
        let mut undistorted = vec![0.0; tw * th];
        let mut undistorted_valid = vec![false; tw * th];
        for v in 0..th {
            for u in 0..tw {
                let xn = k.to_normalized(Vector2::new(u as f64, v as f64));
                let p = k.to_pixel(geometry::distort(xn, &state.distortion));
                if let Some(s) = image_ops::bilinear(&self.thermal, tw, th, p.x, p.y) {
                    undistorted[v * tw + u] = s.value;
                    undistorted_valid[v * tw + u] = true;
                }
            }
        }
        // Pass 2: pinhole warp into the RGB frame.
        let transform = geometry::exp_se3(&state.xi);
        let n = self.width * self.height;
        let mut warped = vec![0.0; n];
        let mut valid = vec![false; n];
        for (i, point) in self.points.iter().enumerate() {
            let Some(x) = point else { continue };
            let Ok(pt) = geometry::project(&transform.transform_point(x), k) else {
                continue;
            };
            let Some(s) = image_ops::bilinear(&undistorted, tw, th, pt.x, pt.y) else {
                continue;
            };
            // All four cell corners must come from valid first-pass samples.
            let x0 = (pt.x.ceil() - 1.0).clamp(0.0, (tw - 2) as f64) as usize;
            let y0 = (pt.y.ceil() - 1.0).clamp(0.0, (th - 2) as f64) as usize;
            let j = y0 * tw + x0;
            if undistorted_valid[j]
                && undistorted_valid[j + 1]
                && undistorted_valid[j + tw]
                && undistorted_valid[j + tw + 1]
            {
                warped[i] = s.value;
                valid[i] = true;
            }
        }
        (warped, valid)
    }

    fn forward(&self, state: &CalibrationState) -> Result<Forward> {
        state.intrinsics.validate()?;
        let (w, h) = (self.width, self.height);
        let n = w * h;
        let (warped, sample_valid, sample_slope) = match self.options.distortion {
            DistortionMode::Composed => self.warp_composed(state),
            DistortionMode::TwoPass => {
                let (warped, valid) = self.warp_two_pass(state);
                (warped, valid, Vec::new())
            }
        };

        let mut gwx = vec![0.0; n];
        let mut gwy = vec![0.0; n];
        image_ops::sobel(&warped, w, h, &mut gwx, &mut gwy);
        let channels: Vec<Vec<f64>> = match self.options.mode {
            LossMode::Signed => vec![gwx.clone(), gwy.clone()],
            LossMode::Magnitude => vec![gwx.iter().zip(&gwy).map(|(a, b)| a.hypot(*b)).collect()],
        };
        let weights = self.options.kernel.weights();
        let residual: Vec<Vec<f64>> = channels
            .iter()
            .zip(&self.reference)
            .map(|(c, r)| {
                let mut smoothed = vec![0.0; n];
                image_ops::convolve_separable(c, w, h, weights, &mut smoothed);
                r.iter().zip(&smoothed).map(|(a, b)| a - b).collect()
            })
            .collect();

        let sample_mask = Plane::from_vec(w, h, sample_valid.clone())?;
        let mask = image_ops::erode(&sample_mask, self.options.mask_margin()).into_vec();
        let valid = mask.iter().filter(|&&m| m).count();
        if valid == 0 {
            return Err(Error::EmptyMask);
        }
        let per_pixel: Vec<f64> = (0..n)
            .map(|i| {
                if mask[i] {
                    residual.iter().map(|r| r[i] * r[i]).sum()
                } else {
                    0.0
                }
            })
            .collect();
        let loss = tree_sum(&per_pixel) / valid as f64;
        Ok(Forward {
            loss: LossValue { loss, valid },
            sample_valid,
            sample_slope,
            warped,
            gwx,
            gwy,
            residual,
            mask,
        })
    }

    fn backward(&self, state: &CalibrationState, fwd: &Forward) -> [f64; NUM_PARAMS] {
        let (w, h) = (self.width, self.height);
        let n = w * h;
        let weights = self.options.kernel.weights();
        let scale = 2.0 / fwd.loss.valid as f64;

        // dL/d(channel) = -G^T (2 r M / |M|)
        let d_channels: Vec<Vec<f64>> = fwd
            .residual
            .iter()
            .map(|r| {
                let d_res: Vec<f64> = (0..n)
                    .map(|i| if fwd.mask[i] { -scale * r[i] } else { 0.0 })
                    .collect();
                let mut out = vec![0.0; n];
                image_ops::convolve_separable_adjoint(&d_res, w, h, weights, &mut out);
                out
            })
            .collect();
        let (d_gx, d_gy) = match self.options.mode {
            LossMode::Signed => (d_channels[0].clone(), d_channels[1].clone()),
            LossMode::Magnitude => {
                let mut dx = vec![0.0; n];
                let mut dy = vec![0.0; n];
                for i in 0..n {
                    let m = fwd.gwx[i].hypot(fwd.gwy[i]);
                    if m > 0.0 {
                        dx[i] = d_channels[0][i] * fwd.gwx[i] / m;
                        dy[i] = d_channels[0][i] * fwd.gwy[i] / m;
                    }
                }
                (dx, dy)
            }
        };
        let mut d_warped = vec![0.0; n];
        image_ops::sobel_adjoint(&d_gx, &d_gy, w, h, &mut d_warped);

        let jac = ExpJacobian::new(&state.xi);
        let k = &state.intrinsics;
        let dist = &state.distortion;
        let mut grad = [0.0; NUM_PARAMS];
        for i in 0..n {
            if !fwd.sample_valid[i] || d_warped[i] == 0.0 {
                continue;
            }
            let x = self.points[i].expect("valid samples have a point");
            let [sx, sy] = fwd.sample_slope[i];
            // dL/d(sample position)
            let g_pt = RowVector2::new(d_warped[i] * sx, d_warped[i] * sy);

            let (xt, j_xi) = jac.point_jacobian(&x);
            let inv_z = 1.0 / xt.z;
            let xn = Vector2::new(xt.x * inv_z, xt.y * inv_z);
            let xd = geometry::distort(xn, dist);

            grad[6] += g_pt[0] * xd.x;
            grad[7] += g_pt[1] * xd.y;
            grad[8] += g_pt[0];
            grad[9] += g_pt[1];

            let g_xd = RowVector2::new(g_pt[0] * k.fx, g_pt[1] * k.fy);
            let g_dist = g_xd * geometry::DistortionParams::param_jacobian(xn);
            for c in 0..4 {
                grad[10 + c] += g_dist[c];
            }
            let g_xn = g_xd * dist.point_jacobian(xn);
            let g_xt = RowVector3::new(
                g_xn[0] * inv_z,
                g_xn[1] * inv_z,
                -(g_xn[0] * xn.x + g_xn[1] * xn.y) * inv_z,
            );
            let g_xi = g_xt * j_xi;
            for c in 0..6 {
                grad[c] += g_xi[c];
            }
        }
        grad
    }
}

/// Loss of one pair at one state.
pub fn calibration_loss(
    rgb: &GrayImage,
    thermal: &GrayImage,
    depth: &DepthMap,
    k_rgb: &PinholeIntrinsics,
    state: &CalibrationState,
    options: &LossOptions,
) -> Result<LossValue> {
    PreparedPair::new(rgb, thermal, depth, k_rgb, options.clone())?.loss(state)
}

const SUM_CHUNK: usize = 1024;

/// Sums fixed-size chunks sequentially, then reduces the chunk sums
/// pairwise. The result depends only on the input, never on scheduling.
pub fn tree_sum(values: &[f64]) -> f64 {
    let mut level: Vec<f64> = values.chunks(SUM_CHUNK).map(|c| c.iter().sum()).collect();
    while level.len() > 1 {
        level = level.chunks(2).map(|p| p.iter().sum()).collect();
    }
    level.first().copied().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;

    use super::*;
    use crate::geometry::{DistortionParams, Se3Coordinates};

    fn k_rgb() -> PinholeIntrinsics {
        PinholeIntrinsics::new(60.0, 60.0, 24.0, 20.0).unwrap()
    }

    fn blob_image(w: usize, h: usize, shift: f64) -> GrayImage {
        GrayImage::from_fn(w, h, |u, v| {
            let du = u as f64 - 22.0 - shift;
            let dv = v as f64 - 19.0;
            let r = (du * du + dv * dv).sqrt();
            (0.2 + 0.6 / (1.0 + ((r - 9.0) * 1.5).exp())) as f32
        })
    }

    fn identity_state(k: PinholeIntrinsics) -> CalibrationState {
        CalibrationState {
            xi: Se3Coordinates::zero(),
            intrinsics: k,
            distortion: DistortionParams::default(),
        }
    }

    #[test]
    fn identical_images_identity_state_have_zero_loss() {
        let img = blob_image(48, 40, 0.0);
        let depth = DepthMap::filled(48, 40, 5.0);
        let value = calibration_loss(
            &img,
            &img,
            &depth,
            &k_rgb(),
            &identity_state(k_rgb()),
            &LossOptions::default(),
        )
        .unwrap();
        assert!(value.loss < 1e-24, "{}", value.loss);
        assert_eq!(value.valid, 48 * 40);
    }

    #[test]
    fn constant_images_have_zero_loss_anywhere() {
        let a = GrayImage::filled(30, 30, 0.3);
        let b = GrayImage::filled(30, 30, 0.8);
        let depth = DepthMap::filled(30, 30, 4.0);
        let mut state = identity_state(PinholeIntrinsics::new(50.0, 52.0, 15.0, 15.0).unwrap());
        state.xi = Se3Coordinates::from_array([0.02, -0.01, 0.03, 0.01, 0.005, -0.02]);
        state.distortion = DistortionParams::new(0.01, 0.0, 0.001, 0.0);
        let k = PinholeIntrinsics::new(50.0, 50.0, 15.0, 15.0).unwrap();
        let opts = LossOptions {
            kernel: GaussianKernel::new(1.0, 5).unwrap(),
            ..Default::default()
        };
        let value = calibration_loss(&a, &b, &depth, &k, &state, &opts).unwrap();
        assert!(value.loss < 1e-24, "{}", value.loss);
    }

    #[test]
    fn misalignment_increases_loss() {
        let rgb = blob_image(48, 40, 0.0);
        let thermal = blob_image(48, 40, 2.0);
        let depth = DepthMap::filled(48, 40, 5.0);
        let opts = LossOptions {
            kernel: GaussianKernel::new(2.0, 9).unwrap(),
            ..Default::default()
        };
        let pair = PreparedPair::new(&rgb, &thermal, &depth, &k_rgb(), opts).unwrap();
        let mut state = identity_state(k_rgb());
        let misaligned = pair.loss(&state).unwrap().loss;
        // Translating by -b shifts thermal samples by fx * b / z = 2 px.
        state.xi.v = Vector3::new(2.0 * 5.0 / 60.0, 0.0, 0.0);
        let aligned = pair.loss(&state).unwrap().loss;
        assert!(aligned < 1e-20, "{aligned}");
        assert!(misaligned > 1e-6);
    }

    #[test]
    fn invalid_depth_everywhere_is_empty_mask() {
        let img = blob_image(20, 20, 0.0);
        let depth = DepthMap::filled(20, 20, 0.0);
        let err = calibration_loss(
            &img,
            &img,
            &depth,
            &k_rgb(),
            &identity_state(k_rgb()),
            &LossOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyMask));
    }

    #[test]
    fn a_single_hole_removes_its_neighbourhood() {
        let img = blob_image(48, 40, 0.0);
        let mut depth = DepthMap::filled(48, 40, 5.0);
        *depth.get_mut(20, 20) = f32::NAN;
        let opts = LossOptions {
            kernel: GaussianKernel::new(1.0, 5).unwrap(),
            ..Default::default()
        };
        let value = calibration_loss(
            &img,
            &img,
            &depth,
            &k_rgb(),
            &identity_state(k_rgb()),
            &opts,
        )
        .unwrap();
        // radius 2 + 1 for Sobel -> a 7x7 hole
        assert_eq!(value.valid, 48 * 40 - 49);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let img = blob_image(20, 20, 0.0);
        let depth = DepthMap::filled(21, 20, 1.0);
        assert!(matches!(
            PreparedPair::new(&img, &img, &depth, &k_rgb(), LossOptions::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn tree_sum_is_exact_on_integers_and_stable() {
        let v: Vec<f64> = (0..5000).map(|i| i as f64).collect();
        assert_eq!(tree_sum(&v), 4999.0 * 5000.0 / 2.0);
        assert_eq!(tree_sum(&[]), 0.0);
        let r: Vec<f64> = (0..3333)
            .map(|i| ((i * 7919) % 1000) as f64 * 1e-3)
            .collect();
        assert_abs_diff_eq!(tree_sum(&r), r.iter().sum::<f64>(), epsilon = 1e-9);
    }
}
