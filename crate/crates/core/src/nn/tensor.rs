use super::Real;
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Channel-major `C x H x W` array, the same layout as [`Raster`].
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "tensor {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_raster(raster: &Raster) -> Self {
        Self {
            channels: raster.channels(),
            height: raster.height(),
            width: raster.width(),
            data: raster.data().iter().map(|&v| T::of(v as f64)).collect(),
        }
    }

    pub fn to_raster(&self) -> Raster {
        Raster::from_fn(self.height, self.width, self.channels, |c, r, k| {
            self.get(c, r, k).f64() as f32
        })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, k: usize) -> T {
        self.data[(c * self.height + r) * self.width + k]
    }

    pub fn band(&self, c: usize) -> &[T] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// Elementwise `self += other * scale`.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        debug_assert!(self.same_shape(other));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b * scale;
        }
    }

    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Self {
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            for r in row..row + h {
                let start = (c * self.height + r) * self.width + col;
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Self {
            channels: self.channels,
            height: h,
            width: w,
            data,
        }
    }
}
