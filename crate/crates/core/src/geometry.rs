//! Camera geometry: pinhole projection, four-parameter radial/tangential
//! distortion, the se(3) exponential map, and the displacement map that
//! carries each RGB pixel to its thermal-image sample position.
//!
//! Conventions:
//!
//! * Pixel coordinates refer to pixel centers, `(0, 0)` is the top-left
//!   pixel, `u` grows to the right and `v` downwards.
//! * Distortion acts on normalized coordinates (after division by `z`,
//!   before the intrinsic scaling).
//! * A [`RigidTransform`] maps points from the RGB camera frame into the
//!   thermal camera frame: `X_t = R * X_rgb + t`.

use nalgebra::{Matrix2, Matrix3, Matrix3x6, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::image::{DepthMap, MaskImage, Plane};

/// Below this rotation angle the exponential-map coefficients switch to
/// their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Threshold for the Taylor expansion of the coefficient derivatives, whose
/// closed forms cancel catastrophically much earlier than the coefficients
/// themselves.
const SMALL_ANGLE_DERIVATIVE: f64 = 1e-1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl PinholeIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be finite and positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidParameter(
                "principal point must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Checks `0 <= cx < width` and `0 <= cy < height`.
    pub fn fits_image(&self, width: usize, height: usize) -> bool {
        (0.0..width as f64).contains(&self.cx) && (0.0..height as f64).contains(&self.cy)
    }

    #[inline]
    pub fn to_pixel(&self, n: Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * n.x + self.cx, self.fy * n.y + self.cy)
    }

    #[inline]
    pub fn to_normalized(&self, p: Vector2<f64>) -> Vector2<f64> {
        Vector2::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }
}

/// Radial (`k1`, `k2`) and tangential (`p1`, `p2`) lens distortion.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistortionParams {
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
}

impl DistortionParams {
    pub fn new(k1: f64, k2: f64, p1: f64, p2: f64) -> Self {
        Self { k1, k2, p1, p2 }
    }

    pub fn is_zero(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0 && self.p1 == 0.0 && self.p2 == 0.0
    }

    pub fn is_finite(&self) -> bool {
        self.k1.is_finite() && self.k2.is_finite() && self.p1.is_finite() && self.p2.is_finite()
    }

    /// Jacobian of [`distort`] with respect to the normalized input point.
    pub fn point_jacobian(&self, xn: Vector2<f64>) -> Matrix2<f64> {
        let (x, y) = (xn.x, xn.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        // d(radial)/d(r2)
        let dr = self.k1 + 2.0 * self.k2 * r2;
        Matrix2::new(
            radial + 2.0 * dr * x * x + 2.0 * self.p1 * y + 6.0 * self.p2 * x,
            2.0 * dr * x * y + 2.0 * self.p1 * x + 2.0 * self.p2 * y,
            2.0 * dr * x * y + 2.0 * self.p1 * x + 2.0 * self.p2 * y,
            radial + 2.0 * dr * y * y + 6.0 * self.p1 * y + 2.0 * self.p2 * x,
        )
    }

    /// Jacobian of [`distort`] with respect to `(k1, k2, p1, p2)`.
    pub fn param_jacobian(xn: Vector2<f64>) -> nalgebra::Matrix2x4<f64> {
        let (x, y) = (xn.x, xn.y);
        let r2 = x * x + y * y;
        nalgebra::Matrix2x4::new(
            x * r2,
            x * r2 * r2,
            2.0 * x * y,
            r2 + 2.0 * x * x,
            y * r2,
            y * r2 * r2,
            r2 + 2.0 * y * y,
            2.0 * x * y,
        )
    }

    /// Inverts [`distort`] with Newton iterations. Returns `None` if the
    /// iteration does not converge (distortion too strong for the radius).
    pub fn undistort(&self, xd: Vector2<f64>) -> Option<Vector2<f64>> {
        let mut xn = xd;
        for _ in 0..50 {
            let residual = distort(xn, self) - xd;
            if residual.norm() < 1e-14 {
                return Some(xn);
            }
            let step = self.point_jacobian(xn).try_inverse()? * residual;
            xn -= step;
            if !(xn.x.is_finite() && xn.y.is_finite()) {
                return None;
            }
        }
        ((distort(xn, self) - xd).norm() < 1e-10).then_some(xn)
    }
}

/// Exponential coordinates `(v, w)` of a rigid motion: `v` in meters,
/// `w` an axis-angle vector in radians.
///
/// The logarithm is unique for `|w| < pi`; this is not enforced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Se3Coordinates {
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl Se3Coordinates {
    pub fn new(v: Vector3<f64>, w: Vector3<f64>) -> Self {
        Self { v, w }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(
            Vector3::new(a[0], a[1], a[2]),
            Vector3::new(a[3], a[4], a[5]),
        )
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.v.x, self.v.y, self.v.z, self.w.x, self.w.y, self.w.z]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

impl std::ops::Neg for Se3Coordinates {
    type Output = Self;

    fn neg(self) -> Self {
        Self::new(-self.v, -self.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    #[inline]
    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Largest deviation of `R^T R` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let gram = (r.transpose() * r - Matrix3::identity()).abs().max();
        gram.max((r.determinant() - 1.0).abs())
    }

    /// Geodesic rotation angle between two transforms, in radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        rotation_angle(&(self.rotation * other.rotation.transpose()))
    }
}

/// Angle of a rotation matrix, accurate near zero and near pi.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let sin_part = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    )
    .norm()
        / 2.0;
    let cos_part = (r.trace() - 1.0) / 2.0;
    sin_part.atan2(cos_part)
}

#[inline]
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -w.z, w.y, //
        w.z, 0.0, -w.x, //
        -w.y, w.x, 0.0,
    )
}

/// Coefficients `A = sin t / t`, `B = (1 - cos t) / t^2`,
/// `C = (1 - A) / t^2` of the exponential map.
pub(crate) fn exp_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        exp_coefficients_exact(theta)
    }
}

pub(crate) fn exp_coefficients_exact(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    let a = theta.sin() / theta;
    let half = (0.5 * theta).sin();
    let b = 2.0 * half * half / t2;
    let c = (1.0 - a) / t2;
    (a, b, c)
}

pub(crate) fn exp_coefficients_taylor(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
}

/// `(dA/dt, dB/dt, dC/dt) / t`, the factors that multiply `w` in the
/// gradient of each coefficient with respect to the rotation vector.
fn exp_coefficient_slopes(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    if theta < SMALL_ANGLE_DERIVATIVE {
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        (
            -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0 + t6 / 45360.0,
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0 + t6 / 453600.0,
            -1.0 / 60.0 + t2 / 1260.0 - t4 / 60480.0 + t6 / 4989600.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t3 = t2 * theta;
        let t4 = t2 * t2;
        let t5 = t4 * theta;
        (
            (theta * c - s) / t3,
            (theta * s - 2.0 * (1.0 - c)) / t4,
            (theta * (1.0 - c) - 3.0 * (theta - s)) / t5,
        )
    }
}

fn exp_with(xi: &Se3Coordinates, (a, b, c): (f64, f64, f64)) -> RigidTransform {
    let k = skew(&xi.w);
    let k2 = k * k;
    let rotation = Matrix3::identity() + k * a + k2 * b;
    let v = Matrix3::identity() + k * b + k2 * c;
    RigidTransform {
        rotation,
        translation: v * xi.v,
    }
}

/// The se(3) exponential map.
pub fn exp_se3(xi: &Se3Coordinates) -> RigidTransform {
    exp_with(xi, exp_coefficients(xi.w.norm()))
}

/// Exponential map forced onto one branch of the coefficient evaluation.
/// Only meaningful for checking continuity at [`SMALL_ANGLE`].
pub fn exp_se3_branch(xi: &Se3Coordinates, taylor: bool) -> RigidTransform {
    let theta = xi.w.norm();
    let coeffs = if taylor {
        exp_coefficients_taylor(theta)
    } else {
        exp_coefficients_exact(theta)
    };
    exp_with(xi, coeffs)
}

/// The exponential map of one state together with everything needed to
/// differentiate `exp(xi) * X` with respect to `xi` for many points `X`.
#[derive(Debug, Clone)]
pub struct ExpJacobian {
    pub transform: RigidTransform,
    /// `d(R e_j)/dw` for the three basis vectors `e_j`.
    rot_columns: [Matrix3<f64>; 3],
    /// `dt/dv`, the left Jacobian `V`.
    trans_dv: Matrix3<f64>,
    /// `dt/dw`.
    trans_dw: Matrix3<f64>,
}

impl ExpJacobian {
    pub fn new(xi: &Se3Coordinates) -> Self {
        let w = xi.w;
        let theta = w.norm();
        let (a, b, c) = exp_coefficients(theta);
        let (da, db, dc) = exp_coefficient_slopes(theta);
        let transform = exp_with(xi, (a, b, c));
        let k = skew(&w);
        let k2 = k * k;

        // d/dw [A K x + B K^2 x] for a fixed vector x.
        let d_quadratic = |x: &Vector3<f64>, a: f64, b: f64, da: f64, db: f64| -> Matrix3<f64> {
            let kx = k * x;
            let k2x = k * kx;
            kx * w.transpose() * da - skew(x) * a + k2x * w.transpose() * db
                - (skew(&kx) + k * skew(x)) * b
        };

        let rot_columns = [
            d_quadratic(&Vector3::x(), a, b, da, db),
            d_quadratic(&Vector3::y(), a, b, da, db),
            d_quadratic(&Vector3::z(), a, b, da, db),
        ];
        let trans_dv = Matrix3::identity() + k * b + k2 * c;
        let trans_dw = d_quadratic(&xi.v, b, c, db, dc);
        Self {
            transform,
            rot_columns,
            trans_dv,
            trans_dw,
        }
    }

    /// Returns `exp(xi) * x` and its 3x6 Jacobian with respect to
    /// `(v, w)`.
    pub fn point_jacobian(&self, x: &Vector3<f64>) -> (Vector3<f64>, Matrix3x6<f64>) {
        let xt = self.transform.transform_point(x);
        let d_rot =
            self.rot_columns[0] * x.x + self.rot_columns[1] * x.y + self.rot_columns[2] * x.z;
        let mut j = Matrix3x6::zeros();
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.trans_dv);
        j.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(d_rot + self.trans_dw));
        (xt, j)
    }
}

#[inline]
pub fn is_valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// Lifts pixel `p` at depth `d` to the camera frame: `d * K^-1 * (u, v, 1)`.
pub fn backproject(p: Vector2<f64>, k: &PinholeIntrinsics, d: f64) -> Result<Vector3<f64>> {
    if !is_valid_depth(d) {
        return Err(Error::InvalidDepth(d));
    }
    Ok(Vector3::new(
        d * (p.x - k.cx) / k.fx,
        d * (p.y - k.cy) / k.fy,
        d,
    ))
}

/// Pinhole projection (no distortion).
pub fn project(x: &Vector3<f64>, k: &PinholeIntrinsics) -> Result<Vector2<f64>> {
    if !(x.z > 0.0) {
        return Err(Error::BehindCamera(x.z));
    }
    Ok(k.to_pixel(Vector2::new(x.x / x.z, x.y / x.z)))
}

/// Applies radial and tangential distortion to a normalized point.
#[inline]
pub fn distort(xn: Vector2<f64>, d: &DistortionParams) -> Vector2<f64> {
    let (x, y) = (xn.x, xn.y);
    let r2 = x * x + y * y;
    let radial = 1.0 + d.k1 * r2 + d.k2 * r2 * r2;
    Vector2::new(
        x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x),
        y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y,
    )
}

/// Projects a point given in the thermal camera frame through the thermal
/// distortion and intrinsics. `None` when the point is not in front of the
/// camera.
#[inline]
pub fn project_distorted(
    x: &Vector3<f64>,
    k: &PinholeIntrinsics,
    d: &DistortionParams,
) -> Option<Vector2<f64>> {
    if !(x.z > 0.0) {
        return None;
    }
    Some(k.to_pixel(distort(Vector2::new(x.x / x.z, x.y / x.z), d)))
}

/// Per-pixel offsets `F = p_rgb - p_t` between each RGB pixel and the
/// position it lands on in the thermal image.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementMap {
    pub offsets: Plane<Vector2<f64>>,
    pub mask: MaskImage,
}

impl DisplacementMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            offsets: Plane::filled(width, height, Vector2::zeros()),
            mask: Plane::filled(width, height, true),
        }
    }

    /// A map with the same offset at every pixel.
    pub fn uniform(width: usize, height: usize, offset: Vector2<f64>) -> Self {
        Self {
            offsets: Plane::filled(width, height, offset),
            mask: Plane::filled(width, height, true),
        }
    }

    pub fn width(&self) -> usize {
        self.offsets.width()
    }

    pub fn height(&self) -> usize {
        self.offsets.height()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.as_slice().iter().filter(|&&m| m).count()
    }

    /// Sample position `p - F(p)` for pixel `(u, v)`, if valid.
    #[inline]
    pub fn sample_position(&self, u: usize, v: usize) -> Option<Vector2<f64>> {
        (*self.mask.get(u, v)).then(|| Vector2::new(u as f64, v as f64) - self.offsets.get(u, v))
    }
}

/// Builds the displacement map from RGB pixels to thermal pixels.
///
/// Distortion is applied to the normalized thermal coordinates before the
/// thermal intrinsics, so warping the raw thermal image with this map
/// resamples it exactly once.
pub fn compute_displacement_map(
    k_rgb: &PinholeIntrinsics,
    depth: &DepthMap,
    k_t: &PinholeIntrinsics,
    distortion: &DistortionParams,
    transform: &RigidTransform,
) -> Result<DisplacementMap> {
    let (w, h) = depth.dims();
    if w == 0 || h == 0 {
        return Err(Error::DimensionMismatch(format!("empty depth map {w}x{h}")));
    }
    let mut map = DisplacementMap {
        offsets: Plane::filled(w, h, Vector2::zeros()),
        mask: Plane::filled(w, h, false),
    };
    for v in 0..h {
        for u in 0..w {
            let p = Vector2::new(u as f64, v as f64);
            let Ok(x) = backproject(p, k_rgb, *depth.get(u, v) as f64) else {
                continue;
            };
            let xt = transform.transform_point(&x);
            if let Some(pt) = project_distorted(&xt, k_t, distortion) {
                *map.offsets.get_mut(u, v) = p - pt;
                *map.mask.get_mut(u, v) = true;
            }
        }
    }
    Ok(map)
}
