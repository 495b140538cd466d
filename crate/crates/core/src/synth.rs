//! Synthetic RGB/thermal rig with known calibration.
//!
//! Scenes are made of textured planes. The RGB image and its depth map are
//! ray-cast from the RGB camera; the thermal image is ray-cast from the
//! thermal camera through the ground-truth pose, intrinsics and lens
//! distortion. Both modalities read the same texture field, so they share
//! edges while their intensities differ.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    self, compute_displacement_map, exp_se3, skew, PinholeIntrinsics, Se3Coordinates,
};
use crate::image::{DepthMap, GrayImage, Plane, RgbImage};
use crate::image_ops::{self, GaussianKernel, LUMA_WEIGHTS};
use crate::optim::{initial_state, CalibrationConfig, CalibrationPair, CalibrationState};

/// Irregular checkerboard: cell boundaries at sorted cut positions along two
/// in-plane axes, each cell with its own brightness.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    pub axes: [Vector3<f64>; 2],
    pub cuts: [Vec<f64>; 2],
    pub seed: u64,
}

impl Texture {
    fn cell(&self, x: &Vector3<f64>) -> (usize, usize) {
        let a = x.dot(&self.axes[0]);
        let b = x.dot(&self.axes[1]);
        (
            self.cuts[0].partition_point(|&c| c <= a),
            self.cuts[1].partition_point(|&c| c <= b),
        )
    }

    /// Brightness in `[0.1, 0.9]`.
    fn level(&self, x: &Vector3<f64>) -> f64 {
        let (i, j) = self.cell(x);
        let h = splitmix64(self.seed ^ splitmix64((i as u64) << 32 | j as u64));
        0.1 + 0.8 * (h >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Rectangular bound of a finite plane: `|(x - center) . axis_k| <= half_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneExtent {
    pub center: Vector3<f64>,
    pub axes: [Vector3<f64>; 2],
    pub half: [f64; 2],
}

/// Points `x` with `normal . x = offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct TexturedPlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub material: usize,
    pub texture: Texture,
    pub extent: Option<PlaneExtent>,
}

impl TexturedPlane {
    /// Ray parameter of the first hit in front of the origin.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.offset - self.normal.dot(origin)) / denom;
        if !(t > 1e-9 && t.is_finite()) {
            return None;
        }
        if let Some(e) = &self.extent {
            let d = origin + dir * t - e.center;
            if (0..2).any(|k| d.dot(&e.axes[k]).abs() > e.half[k]) {
                return None;
            }
        }
        Some(t)
    }
}

/// Per-material appearance: an RGB tint applied to the texture level and an
/// offset added to the thermal intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub rgb: [f64; 3],
    pub thermal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRig {
    pub gt_state: CalibrationState,
    pub k_rgb: PinholeIntrinsics,
    pub width: usize,
    pub height: usize,
    pub thermal_width: usize,
    pub thermal_height: usize,
    pub planes: Vec<TexturedPlane>,
    pub materials: Vec<Material>,
    /// Thermal intensity per unit of RGB luma.
    pub thermal_gain: f64,
    /// Flip thermal contrast (`1 - t`).
    pub invert_polarity: bool,
    pub noise_sigma: f64,
    /// Gaussian blur applied to both rendered images; 0 disables it.
    pub blur_sigma: f64,
    /// Samples per pixel along each axis.
    pub supersampling: usize,
    pub seed: u64,
}

/// RGB image, thermal image and RGB-registered depth.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPair {
    pub rgb: RgbImage,
    pub thermal: GrayImage,
    pub depth: DepthMap,
}

impl RenderedPair {
    pub fn to_calibration_pair(&self) -> CalibrationPair {
        CalibrationPair {
            rgb: image_ops::to_grayscale(&self.rgb),
            thermal: self.thermal.clone(),
            depth: self.depth.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecoveryError {
    /// Degrees.
    pub rot_err: f64,
    /// Meters.
    pub trans_err: f64,
    /// Worst relative focal length error.
    pub focal_err: f64,
    /// Pixels.
    pub pp_err: f64,
    /// Relative error of `k1` (absolute when the true `k1` is 0).
    pub dist_err: f64,
    /// Mean `|F_recovered - F_true|` in pixels.
    pub mean_disp_err: f64,
}

impl SyntheticRig {
    /// 160x128 rig with a random room scene drawn from `seed`.
    pub fn desk_scale(gt_state: CalibrationState, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (planes, materials) = random_room(&mut rng);
        Self {
            gt_state,
            k_rgb: PinholeIntrinsics {
                fx: 85.0,
                fy: 85.0,
                cx: 80.0,
                cy: 64.0,
            },
            width: 160,
            height: 128,
            thermal_width: 160,
            thermal_height: 128,
            planes,
            materials,
            thermal_gain: rng.random_range(0.9..1.1),
            invert_polarity: false,
            noise_sigma: 0.0,
            blur_sigma: 0.0,
            supersampling: 3,
            seed,
        }
    }

    /// The same rig around a new random scene.
    pub fn with_random_scene(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (planes, materials) = random_room(&mut rng);
        Self {
            planes,
            materials,
            thermal_gain: rng.random_range(0.9..1.1),
            seed,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        self.k_rgb.validate()?;
        self.gt_state.intrinsics.validate()?;
        if self.supersampling == 0 {
            return Err(Error::InvalidParameter(
                "supersampling must be at least 1".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.blur_sigma >= 0.0) {
            return Err(Error::InvalidParameter(
                "noise and blur must be nonnegative".into(),
            ));
        }
        if let Some(p) = self
            .planes
            .iter()
            .find(|p| p.material >= self.materials.len())
        {
            return Err(Error::InvalidParameter(format!(
                "unknown material {}",
                p.material
            )));
        }
        Ok(())
    }

    fn first_hit(
        &self,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
    ) -> Option<(f64, &TexturedPlane)> {
        self.planes
            .iter()
            .filter_map(|p| p.intersect(origin, dir).map(|t| (t, p)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    fn shade(&self, plane: &TexturedPlane, x: &Vector3<f64>) -> ([f64; 3], f64) {
        let level = plane.texture.level(x);
        let m = &self.materials[plane.material];
        let rgb = m.rgb.map(|c| c * level);
        let luma: f64 = rgb.iter().zip(LUMA_WEIGHTS).map(|(c, w)| c * w).sum();
        let t = (self.thermal_gain * luma + m.thermal).clamp(0.0, 1.0);
        (rgb, if self.invert_polarity { 1.0 - t } else { t })
    }

    fn subpixel_offsets(&self) -> Vec<f64> {
        let s = self.supersampling;
        (0..s).map(|i| (i as f64 + 0.5) / s as f64 - 0.5).collect()
    }

    /// Depth of the RGB camera ray through each pixel center.
    pub fn render_depth(&self) -> Result<DepthMap> {
        self.validate()?;
        let origin = Vector3::zeros();
        let rows: Vec<Vec<f32>> = (0..self.height)
            .into_par_iter()
            .map(|v| {
                (0..self.width)
                    .map(|u| {
                        let dir = self.rgb_ray(u as f64, v as f64);
                        self.first_hit(&origin, &dir).map(|(t, _)| t as f32).ok_or(
                            Error::DegenerateScene {
                                u: u as f64,
                                v: v as f64,
                            },
                        )
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Plane::from_vec(self.width, self.height, rows.concat())
    }

    /// Ray direction with unit z, so the hit parameter is the z-depth.
    fn rgb_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let n = self.k_rgb.to_normalized(Vector2::new(u, v));
        Vector3::new(n.x, n.y, 1.0)
    }

    fn render_rgb(&self) -> Result<RgbImage> {
        let offsets = self.subpixel_offsets();
        let weight = 1.0 / (offsets.len() * offsets.len()) as f64;
        let origin = Vector3::zeros();
        let rows: Vec<Vec<[f32; 3]>> = (0..self.height)
            .into_par_iter()
            .map(|v| {
                (0..self.width)
                    .map(|u| {
                        let mut acc = [0.0; 3];
                        for dv in &offsets {
                            for du in &offsets {
                                let (su, sv) = (u as f64 + du, v as f64 + dv);
                                let dir = self.rgb_ray(su, sv);
                                let (t, plane) = self
                                    .first_hit(&origin, &dir)
                                    .ok_or(Error::DegenerateScene { u: su, v: sv })?;
                                let (rgb, _) = self.shade(plane, &(dir * t));
                                for c in 0..3 {
                                    acc[c] += rgb[c] * weight;
                                }
                            }
                        }
                        Ok(acc.map(|c| c as f32))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Plane::from_vec(self.width, self.height, rows.concat())
    }

    fn render_thermal(&self) -> Result<GrayImage> {
        let offsets = self.subpixel_offsets();
        let weight = 1.0 / (offsets.len() * offsets.len()) as f64;
        let gt = &self.gt_state;
        let transform = exp_se3(&gt.xi);
        let rt = transform.rotation.transpose();
        // Thermal camera center and ray directions in the RGB frame.
        let origin = -(rt * transform.translation);
        let rows: Vec<Vec<f32>> = (0..self.thermal_height)
            .into_par_iter()
            .map(|v| {
                (0..self.thermal_width)
                    .map(|u| {
                        let mut acc = 0.0;
                        for dv in &offsets {
                            for du in &offsets {
                                let (su, sv) = (u as f64 + du, v as f64 + dv);
                                let miss = Error::DegenerateScene { u: su, v: sv };
                                let xd = gt.intrinsics.to_normalized(Vector2::new(su, sv));
                                let xn = gt.distortion.undistort(xd).ok_or(miss)?;
                                let dir = rt * Vector3::new(xn.x, xn.y, 1.0);
                                let (t, plane) = self
                                    .first_hit(&origin, &dir)
                                    .ok_or(Error::DegenerateScene { u: su, v: sv })?;
                                acc += self.shade(plane, &(origin + dir * t)).1 * weight;
                            }
                        }
                        Ok(acc as f32)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Plane::from_vec(self.thermal_width, self.thermal_height, rows.concat())
    }

    /// Renders the RGB image, the thermal image and the RGB depth map.
    pub fn render_pair(&self) -> Result<RenderedPair> {
        self.validate()?;
        let depth = self.render_depth()?;
        let mut rgb = self.render_rgb()?;
        let mut thermal = self.render_thermal()?;
        if self.blur_sigma > 0.0 {
            let taps = 2 * (3.0 * self.blur_sigma).ceil() as usize + 1;
            let kernel = GaussianKernel::new(self.blur_sigma, taps)?;
            thermal = image_ops::smooth(&thermal, &kernel);
            let channels: Vec<GrayImage> = (0..3)
                .map(|c| image_ops::smooth(&rgb.map(|p| p[c]), &kernel))
                .collect();
            rgb = Plane::from_fn(self.width, self.height, |u, v| {
                [0, 1, 2].map(|c| *channels[c].get(u, v))
            });
        }
        if self.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, self.noise_sigma)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ 0x006e_6f69_7365));
            for px in rgb.as_mut_slice() {
                for c in px.iter_mut() {
                    *c += noise.sample(&mut rng) as f32;
                }
            }
            for t in thermal.as_mut_slice() {
                *t += noise.sample(&mut rng) as f32;
            }
        }
        Ok(RenderedPair {
            rgb,
            thermal,
            depth,
        })
    }
}

/// Renders `n` pairs of the rig's calibration, each around its own random
/// scene derived from the rig seed.
pub fn render_dataset(rig: &SyntheticRig, n: usize) -> Result<Vec<RenderedPair>> {
    (0..n)
        .into_par_iter()
        .map(|i| rig.with_random_scene(pair_seed(rig.seed, i)).render_pair())
        .collect()
}

/// Seed of the `i`-th scene of a dataset.
pub fn pair_seed(seed: u64, i: usize) -> u64 {
    splitmix64(seed.wrapping_add(splitmix64(i as u64 + 1)))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Two unit vectors spanning the plane orthogonal to `n`.
fn plane_axes(n: &Vector3<f64>) -> [Vector3<f64>; 2] {
    let helper = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let a = n.cross(&helper).normalize();
    [a, n.cross(&a)]
}

fn random_cuts(rng: &mut ChaCha8Rng, min_gap: f64, max_gap: f64) -> Vec<f64> {
    let mut cuts = Vec::new();
    let mut x = -25.0 + rng.random_range(0.0..max_gap);
    while x < 25.0 {
        cuts.push(x);
        x += rng.random_range(min_gap..max_gap);
    }
    cuts
}

fn random_texture(rng: &mut ChaCha8Rng, axes: [Vector3<f64>; 2]) -> Texture {
    let (lo, hi) = (rng.random_range(0.3..0.5), rng.random_range(0.9..1.5));
    Texture {
        axes,
        cuts: [random_cuts(rng, lo, hi), random_cuts(rng, lo, hi)],
        seed: rng.random(),
    }
}

/// A box room (back wall, side walls, floor, ceiling) with a few free
/// standing panels in front of the back wall.
fn random_room(rng: &mut ChaCha8Rng) -> (Vec<TexturedPlane>, Vec<Material>) {
    let mut planes = Vec::new();
    let wall = |rng: &mut ChaCha8Rng,
                normal: Vector3<f64>,
                offset: f64,
                planes: &mut Vec<TexturedPlane>| {
        let material = planes.len();
        planes.push(TexturedPlane {
            normal,
            offset,
            material,
            texture: random_texture(rng, plane_axes(&normal)),
            extent: None,
        });
    };
    let z = rng.random_range(8.5..10.0);
    wall(rng, Vector3::z(), z, &mut planes);
    let x = -rng.random_range(3.0..4.5);
    wall(rng, Vector3::x(), x, &mut planes);
    let x = rng.random_range(3.0..4.5);
    wall(rng, Vector3::x(), x, &mut planes);
    let y = rng.random_range(2.4..3.2);
    wall(rng, Vector3::y(), y, &mut planes);
    let y = -rng.random_range(2.4..3.2);
    wall(rng, Vector3::y(), y, &mut planes);

    let panels = rng.random_range(2..=3);
    for _ in 0..panels {
        let z = rng.random_range(3.5..6.5);
        let center = Vector3::new(
            rng.random_range(-0.55..0.55) * z,
            rng.random_range(-0.4..0.4) * z,
            z,
        );
        let tilt = Vector3::new(
            rng.random_range(-0.35..0.35),
            rng.random_range(-0.2..0.2),
            1.0,
        );
        let normal = tilt.normalize();
        let axes = plane_axes(&normal);
        let material = planes.len();
        planes.push(TexturedPlane {
            normal,
            offset: normal.dot(&center),
            material,
            texture: random_texture(rng, axes),
            extent: Some(PlaneExtent {
                center,
                axes,
                half: [rng.random_range(0.5..1.2), rng.random_range(0.5..1.2)],
            }),
        });
    }
    let materials = (0..planes.len())
        .map(|_| Material {
            rgb: [0; 3].map(|_| rng.random_range(0.7..1.0)),
            thermal: rng.random_range(-0.05..0.05),
        })
        .collect();
    (planes, materials)
}

/// Pose from a rotation vector and a translation: `exp` of the returned
/// coordinates has rotation `exp(w)` and translation `t`.
pub fn se3_from_rotation_translation(w: Vector3<f64>, t: Vector3<f64>) -> Se3Coordinates {
    let (_, b, c) = geometry::exp_coefficients(w.norm());
    let k = skew(&w);
    let v = Matrix3::identity() + k * b + k * k * c;
    let v_inv = v.try_inverse().expect("V is invertible for |w| < 2 pi");
    Se3Coordinates::new(v_inv * t, w)
}

/// Magnitudes of a calibration perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub rotation_deg: f64,
    pub translation: f64,
    /// Relative focal change, applied to both focal lengths.
    pub focal: f64,
    /// Added to `k1`.
    pub k1: f64,
}

impl Perturbation {
    /// Applies the perturbation with a random rotation axis and translation
    /// direction. The translation is added in the thermal frame.
    pub fn apply(&self, state: &CalibrationState, rng: &mut ChaCha8Rng) -> CalibrationState {
        let base = exp_se3(&state.xi);
        let dr = exp_se3(&Se3Coordinates::new(
            Vector3::zeros(),
            random_unit(rng) * self.rotation_deg.to_radians(),
        ))
        .rotation;
        let rotation = dr * base.rotation;
        let translation = base.translation + random_unit(rng) * self.translation;
        let w = rotation_vector(&rotation);
        let mut out = *state;
        out.xi = se3_from_rotation_translation(w, translation);
        out.intrinsics.fx *= 1.0 + self.focal;
        out.intrinsics.fy *= 1.0 + self.focal;
        out.distortion.k1 += self.k1;
        out
    }

    /// Random perturbation whose magnitudes lie between `floor` and `self`
    /// with random signs on the focal and distortion terms.
    pub fn sample(&self, floor: &Perturbation, rng: &mut ChaCha8Rng) -> Perturbation {
        let mut pick = |lo: f64, hi: f64, signed: bool| {
            let m = rng.random_range(lo..=hi);
            if signed && rng.random_bool(0.5) {
                -m
            } else {
                m
            }
        };
        Perturbation {
            rotation_deg: pick(floor.rotation_deg, self.rotation_deg, false),
            translation: pick(floor.translation, self.translation, false),
            focal: pick(floor.focal, self.focal, true),
            k1: pick(floor.k1, self.k1, true),
        }
    }
}

/// Rotation vector of a rotation matrix with angle below pi.
pub fn rotation_vector(r: &Matrix3<f64>) -> Vector3<f64> {
    let angle = geometry::rotation_angle(r);
    let axis = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let s = axis.norm();
    if s < 1e-15 {
        return Vector3::zeros();
    }
    axis / s * angle
}

/// Compares a recovered state with the rig's ground truth. Displacement
/// errors are averaged over the pixels valid under both states.
pub fn recovery_error(recovered: &CalibrationState, rig: &SyntheticRig) -> Result<RecoveryError> {
    let depth = rig.render_depth()?;
    recovery_error_with_depths(
        recovered,
        &rig.gt_state,
        &rig.k_rgb,
        std::slice::from_ref(&depth),
    )
}

/// [`recovery_error`] against explicit depth maps.
pub fn recovery_error_with_depths(
    recovered: &CalibrationState,
    gt: &CalibrationState,
    k_rgb: &PinholeIntrinsics,
    depths: &[DepthMap],
) -> Result<RecoveryError> {
    let t_rec = exp_se3(&recovered.xi);
    let t_gt = exp_se3(&gt.xi);
    let (kr, kg) = (&recovered.intrinsics, &gt.intrinsics);
    let k1_err = (recovered.distortion.k1 - gt.distortion.k1).abs();

    let mut disp_sum = 0.0;
    let mut disp_count = 0usize;
    for depth in depths {
        let f_rec = compute_displacement_map(k_rgb, depth, kr, &recovered.distortion, &t_rec)?;
        let f_gt = compute_displacement_map(k_rgb, depth, kg, &gt.distortion, &t_gt)?;
        for i in 0..depth.len() {
            if f_rec.mask.as_slice()[i] && f_gt.mask.as_slice()[i] {
                disp_sum += (f_rec.offsets.as_slice()[i] - f_gt.offsets.as_slice()[i]).norm();
                disp_count += 1;
            }
        }
    }
    Ok(RecoveryError {
        rot_err: t_rec.rotation_angle_to(&t_gt).to_degrees(),
        trans_err: (t_rec.translation - t_gt.translation).norm(),
        focal_err: (kr.fx / kg.fx - 1.0).abs().max((kr.fy / kg.fy - 1.0).abs()),
        pp_err: Vector2::new(kr.cx - kg.cx, kr.cy - kg.cy).norm(),
        dist_err: if gt.distortion.k1 == 0.0 {
            k1_err
        } else {
            k1_err / gt.distortion.k1.abs()
        },
        mean_disp_err: if disp_count == 0 {
            0.0
        } else {
            disp_sum / disp_count as f64
        },
    })
}

/// Everything needed to generate a synthetic dataset: the rig geometry,
/// the perturbation of the ground truth away from the lens-derived initial
/// state, and rendering options.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub pairs: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub k_rgb: PinholeIntrinsics,
    /// Thermal lens focal length in mm.
    pub f_manufactured: f64,
    /// Thermal pixel pitch in mm.
    pub pixel_pitch: f64,
    pub perturbation: Perturbation,
    pub noise_sigma: f64,
    pub blur_sigma: f64,
    pub invert_polarity: bool,
    /// Scene without planes, for exercising the degenerate-scene path.
    pub empty_scene: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            pairs: 40,
            seed: 0,
            width: 160,
            height: 128,
            k_rgb: PinholeIntrinsics {
                fx: 85.0,
                fy: 85.0,
                cx: 80.0,
                cy: 64.0,
            },
            f_manufactured: 0.8,
            pixel_pitch: 0.012,
            perturbation: Perturbation {
                rotation_deg: 2.0,
                translation: 0.1,
                focal: 0.1,
                k1: 0.05,
            },
            noise_sigma: 0.0,
            blur_sigma: 0.0,
            invert_polarity: false,
            empty_scene: false,
        }
    }
}

impl SynthSpec {
    /// The lens-derived state the optimizer starts from.
    pub fn initial_state(&self) -> Result<CalibrationState> {
        let cfg = CalibrationConfig {
            f_manufactured: self.f_manufactured,
            pixel_pitch: self.pixel_pitch,
            ..Default::default()
        };
        initial_state(&cfg, self.width, self.height)
    }

    pub fn ground_truth(&self) -> Result<CalibrationState> {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ 0x6774));
        Ok(self.perturbation.apply(&self.initial_state()?, &mut rng))
    }

    /// Rig for the first pair; [`render_dataset`] varies the scene per pair.
    pub fn rig(&self) -> Result<SyntheticRig> {
        let mut rig = SyntheticRig::desk_scale(self.ground_truth()?, self.seed);
        rig.k_rgb = self.k_rgb;
        rig.width = self.width;
        rig.height = self.height;
        rig.thermal_width = self.width;
        rig.thermal_height = self.height;
        rig.noise_sigma = self.noise_sigma;
        rig.blur_sigma = self.blur_sigma;
        rig.invert_polarity = self.invert_polarity;
        Ok(rig)
    }

    pub fn render(&self) -> Result<Vec<RenderedPair>> {
        let rig = self.rig()?;
        if self.empty_scene {
            let mut empty = rig;
            empty.planes.clear();
            empty.materials.clear();
            return (0..self.pairs).map(|_| empty.render_pair()).collect();
        }
        render_dataset(&rig, self.pairs)
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::geometry::{DistortionParams, RigidTransform};

    fn identity_state(k: PinholeIntrinsics) -> CalibrationState {
        CalibrationState {
            xi: Se3Coordinates::zero(),
            intrinsics: k,
            distortion: DistortionParams::default(),
        }
    }

    /// One fronto-parallel plane at `z` with a single vertical edge at x = 0.
    fn edge_rig(z: f64, gt: CalibrationState) -> SyntheticRig {
        let mut rig = SyntheticRig::desk_scale(gt, 0);
        rig.k_rgb = gt.intrinsics;
        rig.planes = vec![TexturedPlane {
            normal: Vector3::z(),
            offset: z,
            material: 0,
            texture: Texture {
                axes: [Vector3::x(), Vector3::y()],
                cuts: [vec![0.0], vec![]],
                seed: 5,
            },
            extent: None,
        }];
        rig.materials = vec![Material {
            rgb: [1.0; 3],
            thermal: 0.0,
        }];
        rig.thermal_gain = 1.0;
        rig
    }

    fn edge_column(img: &GrayImage, v: usize) -> usize {
        (1..img.width())
            .max_by(|&a, &b| {
                let da = (img.get(a, v) - img.get(a - 1, v)).abs();
                let db = (img.get(b, v) - img.get(b - 1, v)).abs();
                da.total_cmp(&db)
            })
            .unwrap()
    }

    #[test]
    fn identity_rig_shares_edges_and_depth_is_constant() {
        let k = PinholeIntrinsics::new(100.0, 100.0, 79.5, 63.5).unwrap();
        let rig = edge_rig(4.0, identity_state(k));
        let pair = rig.render_pair().unwrap();
        assert!(pair
            .depth
            .as_slice()
            .iter()
            .all(|&d| (d - 4.0).abs() < 1e-5));
        let gray = image_ops::to_grayscale(&pair.rgb);
        for v in [10, 64, 120] {
            assert_eq!(edge_column(&gray, v), edge_column(&pair.thermal, v));
        }
    }

    #[test]
    fn baseline_shifts_thermal_edges_by_disparity() {
        let k = PinholeIntrinsics::new(100.0, 100.0, 79.5, 63.5).unwrap();
        for (tx, shift) in [(0.2, 5), (-0.2, -5)] {
            let mut gt = identity_state(k);
            gt.xi = Se3Coordinates::new(Vector3::new(tx, 0.0, 0.0), Vector3::zeros());
            let pair = edge_rig(4.0, gt).render_pair().unwrap();
            let gray = image_ops::to_grayscale(&pair.rgb);
            let du = edge_column(&pair.thermal, 64) as i64 - edge_column(&gray, 64) as i64;
            assert_eq!(du, shift);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let k = PinholeIntrinsics::new(100.0, 100.0, 80.0, 64.0).unwrap();
        let mut rig = SyntheticRig::desk_scale(identity_state(k), 17);
        let a = rig.render_pair().unwrap();
        assert_eq!(a, rig.render_pair().unwrap());
        rig.noise_sigma = 0.01;
        let b = rig.render_pair().unwrap();
        assert_eq!(b, rig.render_pair().unwrap());
        assert_ne!(a, b);
    }

    #[test]
    fn room_depth_is_positive_and_in_range() {
        let k = PinholeIntrinsics::new(85.0, 85.0, 80.0, 64.0).unwrap();
        for seed in 0..5 {
            let d = SyntheticRig::desk_scale(identity_state(k), seed)
                .render_depth()
                .unwrap();
            for &z in d.as_slice() {
                assert!(z.is_finite() && z >= 3.0 && z <= 10.0, "{z}");
            }
        }
    }

    #[test]
    fn plane_behind_camera_is_degenerate() {
        let k = PinholeIntrinsics::new(100.0, 100.0, 80.0, 64.0).unwrap();
        let mut rig = edge_rig(4.0, identity_state(k));
        rig.planes[0].offset = -5.0;
        assert!(matches!(
            rig.render_pair(),
            Err(Error::DegenerateScene { .. })
        ));
        rig.planes.clear();
        assert!(matches!(
            rig.render_depth(),
            Err(Error::DegenerateScene { .. })
        ));
    }

    #[test]
    fn polarity_flag_inverts_thermal() {
        let k = PinholeIntrinsics::new(100.0, 100.0, 80.0, 64.0).unwrap();
        let mut rig = SyntheticRig::desk_scale(identity_state(k), 3);
        let a = rig.render_pair().unwrap().thermal;
        rig.invert_polarity = true;
        let b = rig.render_pair().unwrap().thermal;
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert_abs_diff_eq!(x + y, 1.0, epsilon = 1e-5);
        }
    }

    #[test]
    fn se3_construction_matches_exp() {
        let w = Vector3::new(0.3, -0.2, 0.5);
        let t = Vector3::new(0.1, 2.0, -0.7);
        let x = exp_se3(&se3_from_rotation_translation(w, t));
        assert_abs_diff_eq!(x.translation, t, epsilon = 1e-12);
        assert_abs_diff_eq!(rotation_vector(&x.rotation), w, epsilon = 1e-12);
    }

    #[test]
    fn recovery_error_examples() {
        let k = PinholeIntrinsics::new(100.0, 100.0, 80.0, 64.0).unwrap();
        let mut gt = identity_state(k);
        gt.distortion.k1 = 0.05;
        let rig = SyntheticRig::desk_scale(gt, 1);
        let e = recovery_error(&gt, &rig).unwrap();
        assert_eq!(e, RecoveryError::default());

        let mut rotated = gt;
        rotated.xi.w = Vector3::new(0.0, 0.0, 1f64.to_radians());
        assert_abs_diff_eq!(
            recovery_error(&rotated, &rig).unwrap().rot_err,
            1.0,
            epsilon = 1e-9
        );

        let mut zoomed = gt;
        zoomed.intrinsics.fx *= 1.05;
        let e = recovery_error(&zoomed, &rig).unwrap();
        assert_abs_diff_eq!(e.focal_err, 0.05, epsilon = 1e-12);
        assert!(e.mean_disp_err > 0.0);
    }

    #[test]
    fn perturbation_magnitudes_are_exact() {
        let k = PinholeIntrinsics::new(100.0, 100.0, 80.0, 64.0).unwrap();
        let base = identity_state(k);
        let p = Perturbation {
            rotation_deg: 2.0,
            translation: 0.1,
            focal: 0.1,
            k1: 0.05,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = p.apply(&base, &mut rng);
        let (a, b) = (exp_se3(&s.xi), RigidTransform::identity());
        assert_abs_diff_eq!(a.rotation_angle_to(&b).to_degrees(), 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(a.translation.norm(), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(s.intrinsics.fx, 110.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.distortion.k1, 0.05);
    }
}
