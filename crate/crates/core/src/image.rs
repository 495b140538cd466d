//! Dense row-major image planes.

use crate::error::{Error, Result};

/// A dense, row-major grid of per-pixel values.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Intensities normalized to `[0, 1]` for loaded images.
pub type GrayImage = Plane<f32>;

/// Per-pixel linear RGB in `[0, 1]`.
pub type RgbImage = Plane<[f32; 3]>;

/// Metric z-depth in meters. Values `<= 0` or non-finite mark a hole.
pub type DepthMap = Plane<f32>;

/// Per-pixel validity.
pub type MaskImage = Plane<bool>;

impl<T> Plane<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} plane needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> &T {
        &self.data[v * self.width + u]
    }

    #[inline]
    pub fn get_mut(&mut self, u: usize, v: usize) -> &mut T {
        &mut self.data[v * self.width + u]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Plane<U> {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Plane<U>) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn ensure_same_dims<U>(&self, other: &Plane<U>, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }
}

impl<T: Clone> Plane<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Copies the `w x h` window whose top-left corner is `(u0, v0)`.
    pub fn crop(&self, u0: usize, v0: usize, w: usize, h: usize) -> Result<Self> {
        if u0 + w > self.width || v0 + h > self.height {
            return Err(Error::DimensionMismatch(format!(
                "crop {w}x{h}+{u0}+{v0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        Ok(Plane::from_fn(w, h, |u, v| {
            self.get(u0 + u, v0 + v).clone()
        }))
    }
}
