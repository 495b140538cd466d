//! Dense image primitives: luma conversion, Sobel gradients, separable
//! Gaussian smoothing, bilinear warping, and mask erosion.
//!
//! The public functions work on the `f32` image types. The loss pipeline
//! uses the `f64` slice kernels (and their adjoints) directly so that
//! central differences at step `1e-6` stay far above rounding noise.

use crate::error::{Error, Result};
use crate::geometry::DisplacementMap;
use crate::image::{GrayImage, MaskImage, Plane, RgbImage};

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Horizontal and vertical image derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub gx: GrayImage,
    pub gy: GrayImage,
}

/// Sampled, truncated, unit-sum zero-mean Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(sigma: f64, taps: usize) -> Result<Self> {
        if taps % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "kernel tap count must be odd, got {taps}"
            )));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel sigma must be positive, got {sigma}"
            )));
        }
        let radius = (taps / 2) as f64;
        let mut weights: Vec<f64> = (0..taps)
            .map(|i| {
                let x = i as f64 - radius;
                (-x * x / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let sum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= sum);
        Ok(Self { sigma, weights })
    }

    /// The single-tap identity kernel.
    pub fn delta() -> Self {
        Self {
            sigma: 0.0,
            weights: vec![1.0],
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn taps(&self) -> usize {
        self.weights.len()
    }

    pub fn radius(&self) -> usize {
        self.weights.len() / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `G(sigma)` sampled over `taps` pixels.
pub fn gaussian_kernel(sigma: f64, taps: usize) -> Result<GaussianKernel> {
    GaussianKernel::new(sigma, taps)
}

pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    img.map(|px| {
        (LUMA_WEIGHTS[0] * px[0] as f64
            + LUMA_WEIGHTS[1] * px[1] as f64
            + LUMA_WEIGHTS[2] * px[2] as f64) as f32
    })
}

/// Sobel derivatives scaled by 1/8 (a unit-slope ramp has gradient 1).
pub fn gradient(img: &GrayImage) -> Result<GradientPair> {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min: 3,
        });
    }
    let src: Vec<f64> = img.as_slice().iter().map(|&x| x as f64).collect();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    sobel(&src, w, h, &mut gx, &mut gy);
    let to_plane = |g: Vec<f64>| {
        Plane::from_vec(w, h, g.into_iter().map(|x| x as f32).collect()).expect("same size")
    };
    Ok(GradientPair {
        gx: to_plane(gx),
        gy: to_plane(gy),
    })
}

/// Separable convolution (horizontal pass then vertical), replicate border.
pub fn smooth(img: &GrayImage, kernel: &GaussianKernel) -> GrayImage {
    let (w, h) = img.dims();
    let src: Vec<f64> = img.as_slice().iter().map(|&x| x as f64).collect();
    let mut out = vec![0.0; w * h];
    convolve_separable(&src, w, h, kernel.weights(), &mut out);
    Plane::from_vec(w, h, out.into_iter().map(|x| x as f32).collect()).expect("same size")
}

/// Samples `img` at `p - F(p)` for every pixel of the displacement map.
///
/// Samples outside `[0, w-1] x [0, h-1]` and pixels where `F` is invalid are
/// masked out and set to zero; they are never clamped to the border.
pub fn warp_bilinear(img: &GrayImage, f: &DisplacementMap) -> Result<(GrayImage, MaskImage)> {
    if !f.offsets.same_dims(&f.mask) {
        return Err(Error::DimensionMismatch(
            "displacement offsets and mask differ in size".into(),
        ));
    }
    let (sw, sh) = img.dims();
    if sw < 2 || sh < 2 {
        return Err(Error::ImageTooSmall {
            width: sw,
            height: sh,
            min: 2,
        });
    }
    let src: Vec<f64> = img.as_slice().iter().map(|&x| x as f64).collect();
    let (w, h) = (f.width(), f.height());
    let mut out = Plane::filled(w, h, 0.0f32);
    let mut mask = Plane::filled(w, h, false);
    for v in 0..h {
        for u in 0..w {
            let Some(p) = f.sample_position(u, v) else {
                continue;
            };
            if let Some(s) = bilinear(&src, sw, sh, p.x, p.y) {
                *out.get_mut(u, v) = s.value as f32;
                *mask.get_mut(u, v) = true;
            }
        }
    }
    Ok((out, mask))
}

/// Clears every pixel within Chebyshev distance `radius` of an invalid one.
pub fn erode(mask: &MaskImage, radius: usize) -> MaskImage {
    let (w, h) = mask.dims();
    if radius == 0 {
        return mask.clone();
    }
    // Summed-area table of invalid pixels.
    let stride = w + 1;
    let mut sat = vec![0u32; (w + 1) * (h + 1)];
    for v in 0..h {
        let mut row = 0u32;
        for u in 0..w {
            row += u32::from(!*mask.get(u, v));
            sat[(v + 1) * stride + u + 1] = sat[v * stride + u + 1] + row;
        }
    }
    Plane::from_fn(w, h, |u, v| {
        if !*mask.get(u, v) {
            return false;
        }
        let (u0, v0) = (u.saturating_sub(radius), v.saturating_sub(radius));
        let (u1, v1) = ((u + radius + 1).min(w), (v + radius + 1).min(h));
        let invalid = sat[v1 * stride + u1] + sat[v0 * stride + u0]
            - sat[v0 * stride + u1]
            - sat[v1 * stride + u0];
        invalid == 0
    })
}

/// One bilinear sample with its spatial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BilinearSample {
    pub value: f64,
    pub dx: f64,
    pub dy: f64,
}

/// Samples this far outside the image are still accepted, so positions
/// that land on the border up to rounding stay valid.
pub(crate) const BORDER_TOLERANCE: f64 = 1e-9;

/// Bilinear interpolation at `(x, y)`; `None` outside `[0, w-1] x [0, h-1]`
/// (widened by [`BORDER_TOLERANCE`]).
///
/// At integer coordinates the cell toward smaller coordinates is used, which
/// fixes the one-sided derivative of this piecewise-linear function.
#[inline]
pub(crate) fn bilinear(src: &[f64], w: usize, h: usize, x: f64, y: f64) -> Option<BilinearSample> {
    let (wf, hf) = ((w - 1) as f64, (h - 1) as f64);
    let tol = BORDER_TOLERANCE;
    if !(x >= -tol && x <= wf + tol && y >= -tol && y <= hf + tol) {
        return None;
    }
    let x0 = (x.ceil() - 1.0).clamp(0.0, wf - 1.0);
    let y0 = (y.ceil() - 1.0).clamp(0.0, hf - 1.0);
    let (a, b) = (x - x0, y - y0);
    let i = y0 as usize * w + x0 as usize;
    let (i00, i10, i01, i11) = (src[i], src[i + 1], src[i + w], src[i + w + 1]);
    Some(BilinearSample {
        value: (1.0 - a) * (1.0 - b) * i00
            + a * (1.0 - b) * i10
            + (1.0 - a) * b * i01
            + a * b * i11,
        dx: (1.0 - b) * (i10 - i00) + b * (i11 - i01),
        dy: (1.0 - a) * (i01 - i00) + a * (i11 - i10),
    })
}

/// 1/8-scaled Sobel with replicate border. Requires `w, h >= 1`.
pub(crate) fn sobel(src: &[f64], w: usize, h: usize, gx: &mut [f64], gy: &mut [f64]) {
    for v in 0..h {
        let vm = v.saturating_sub(1) * w;
        let vc = v * w;
        let vp = (v + 1).min(h - 1) * w;
        for u in 0..w {
            let um = u.saturating_sub(1);
            let up = (u + 1).min(w - 1);
            let right = src[vm + up] + 2.0 * src[vc + up] + src[vp + up];
            let left = src[vm + um] + 2.0 * src[vc + um] + src[vp + um];
            let down = src[vp + um] + 2.0 * src[vp + u] + src[vp + up];
            let up_row = src[vm + um] + 2.0 * src[vm + u] + src[vm + up];
            gx[vc + u] = (right - left) * 0.125;
            gy[vc + u] = (down - up_row) * 0.125;
        }
    }
}

/// Adds `S_x^T dgx + S_y^T dgy` to `out`, the transpose of [`sobel`].
pub(crate) fn sobel_adjoint(dgx: &[f64], dgy: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for v in 0..h {
        let vm = v.saturating_sub(1) * w;
        let vc = v * w;
        let vp = (v + 1).min(h - 1) * w;
        for u in 0..w {
            let um = u.saturating_sub(1);
            let up = (u + 1).min(w - 1);
            let gx = dgx[vc + u] * 0.125;
            let gy = dgy[vc + u] * 0.125;
            out[vm + up] += gx - gy;
            out[vc + up] += 2.0 * gx;
            out[vp + up] += gx + gy;
            out[vm + um] += -gx - gy;
            out[vc + um] -= 2.0 * gx;
            out[vp + um] += -gx + gy;
            out[vp + u] += 2.0 * gy;
            out[vm + u] -= 2.0 * gy;
        }
    }
}

fn convolve_rows(src: &[f64], w: usize, h: usize, k: &[f64], out: &mut [f64]) {
    let r = k.len() / 2;
    let mut padded = vec![0.0; w + 2 * r];
    for v in 0..h {
        let row = &src[v * w..(v + 1) * w];
        for (j, p) in padded.iter_mut().enumerate() {
            *p = row[j.saturating_sub(r).min(w - 1)];
        }
        let dst = &mut out[v * w..(v + 1) * w];
        for (i, d) in dst.iter_mut().enumerate() {
            *d = padded[i..i + k.len()]
                .iter()
                .zip(k)
                .map(|(a, b)| a * b)
                .sum();
        }
    }
}

fn convolve_rows_adjoint(g: &[f64], w: usize, h: usize, k: &[f64], out: &mut [f64]) {
    let r = k.len() / 2;
    let mut padded = vec![0.0; w + 2 * r];
    for v in 0..h {
        padded.iter_mut().for_each(|p| *p = 0.0);
        let row = &g[v * w..(v + 1) * w];
        for (i, &gi) in row.iter().enumerate() {
            if gi == 0.0 {
                continue;
            }
            for (p, &kk) in padded[i..i + k.len()].iter_mut().zip(k) {
                *p += kk * gi;
            }
        }
        let dst = &mut out[v * w..(v + 1) * w];
        for (j, &p) in padded.iter().enumerate() {
            dst[j.saturating_sub(r).min(w - 1)] += p;
        }
    }
}

fn convolve_cols(src: &[f64], w: usize, h: usize, k: &[f64], out: &mut [f64]) {
    let r = k.len() as isize / 2;
    for v in 0..h {
        let dst = &mut out[v * w..(v + 1) * w];
        dst.iter_mut().for_each(|d| *d = 0.0);
        for (t, &kk) in k.iter().enumerate() {
            let sv = (v as isize + t as isize - r).clamp(0, h as isize - 1) as usize;
            let row = &src[sv * w..(sv + 1) * w];
            for (d, s) in dst.iter_mut().zip(row) {
                *d += kk * s;
            }
        }
    }
}

fn convolve_cols_adjoint(g: &[f64], w: usize, h: usize, k: &[f64], out: &mut [f64]) {
    let r = k.len() as isize / 2;
    for v in 0..h {
        let row = &g[v * w..(v + 1) * w];
        for (t, &kk) in k.iter().enumerate() {
            let sv = (v as isize + t as isize - r).clamp(0, h as isize - 1) as usize;
            let dst = &mut out[sv * w..(sv + 1) * w];
            for (d, s) in dst.iter_mut().zip(row) {
                *d += kk * s;
            }
        }
    }
}

/// Separable convolution with replicate border, horizontal pass first.
pub(crate) fn convolve_separable(src: &[f64], w: usize, h: usize, k: &[f64], out: &mut [f64]) {
    let mut tmp = vec![0.0; w * h];
    convolve_rows(src, w, h, k, &mut tmp);
    convolve_cols(&tmp, w, h, k, out);
}

/// Adds the transpose of [`convolve_separable`] applied to `g` into `out`.
pub(crate) fn convolve_separable_adjoint(
    g: &[f64],
    w: usize,
    h: usize,
    k: &[f64],
    out: &mut [f64],
) {
    let mut tmp = vec![0.0; w * h];
    convolve_cols_adjoint(g, w, h, k, &mut tmp);
    convolve_rows_adjoint(&tmp, w, h, k, out);
}
