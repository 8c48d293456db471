//! Multi-channel float images and the transforms the pipeline applies to them.
//!
//! A [`Raster`] stores its samples band-sequentially: all of channel 0 in
//! row-major order, then channel 1, and so on. Every later stage (prior,
//! networks, difference images) reads and writes this layout directly.

mod io;
mod resample;

pub use io::{
    decode, encode, export_png, load, load_mask_png, save, save_mask_png, save_rgb_png,
    PngChannels,
};
pub use resample::{downsample2, upsample_bilinear};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    /// Wraps band-sequential samples, checking length and finiteness.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape(format!(
                "raster dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "raster {height}x{width}x{channels} needs {expected} samples, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::shape(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Builds a raster from `f(channel, row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for r in 0..height {
                for col in 0..width {
                    data.push(f(c, r, col));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn band(&self, channel: usize) -> &[f32] {
        let n = self.pixel_count();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn band_mut(&mut self, channel: usize) -> &mut [f32] {
        let n = self.pixel_count();
        &mut self.data[channel * n..(channel + 1) * n]
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f32) {
        self.data[(channel * self.height + row) * self.width + col] = value;
    }

    pub fn same_grid(&self, other: &Raster) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Single-channel raster holding `values` (row-major).
    pub fn from_band(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        Self::new(height, width, 1, values)
    }

    /// Copies the window `[row, row + h) x [col, col + w)` of every channel.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Raster> {
        if row + h > self.height || col + w > self.width || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "crop {h}x{w} at ({row},{col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Ok(Raster::from_fn(h, w, self.channels, |c, r, k| {
            self.get(c, row + r, col + k)
        }))
    }

    /// Per-channel (min, max).
    pub fn channel_ranges(&self) -> Vec<(f32, f32)> {
        (0..self.channels)
            .map(|c| {
                self.band(c)
                    .iter()
                    .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    })
            })
            .collect()
    }
}

/// Affine map parameters of one normalized channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelRange {
    pub min: f32,
    pub max: f32,
    /// Set when the channel had `max == min` and was mapped to all zeros.
    pub constant: bool,
}

/// A raster mapped channel-wise onto [-1, 1], carrying the ranges needed to undo it.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedRaster {
    raster: Raster,
    ranges: Vec<ChannelRange>,
}

impl NormalizedRaster {
    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn ranges(&self) -> &[ChannelRange] {
        &self.ranges
    }

    pub fn into_raster(self) -> Raster {
        self.raster
    }

    pub fn has_constant_channel(&self) -> bool {
        self.ranges.iter().any(|r| r.constant)
    }

    /// Treats `raster` as already normalized; values must lie in [-1, 1].
    pub fn assume_normalized(raster: Raster) -> Result<Self> {
        if let Some(v) = raster.data().iter().find(|v| v.abs() > 1.0) {
            return Err(Error::shape(format!("value {v} outside [-1, 1]")));
        }
        let ranges = vec![
            ChannelRange {
                min: -1.0,
                max: 1.0,
                constant: false,
            };
            raster.channels()
        ];
        Ok(Self { raster, ranges })
    }

    /// Undoes the affine map. Constant channels come back as their constant.
    pub fn denormalize(&self) -> Raster {
        let mut out = self.raster.clone();
        for (c, range) in self.ranges.iter().enumerate() {
            let (lo, hi) = (range.min as f64, range.max as f64);
            for v in out.band_mut(c) {
                *v = if range.constant {
                    range.min
                } else {
                    ((*v as f64 + 1.0) * 0.5 * (hi - lo) + lo) as f32
                };
            }
        }
        out
    }
}

/// Maps each channel affinely onto [-1, 1]: `x -> 2 (x - min) / (max - min) - 1`.
pub fn normalize(raster: &Raster) -> NormalizedRaster {
    let mut out = raster.clone();
    let mut ranges = Vec::with_capacity(raster.channels());
    for (c, (lo, hi)) in raster.channel_ranges().into_iter().enumerate() {
        let constant = hi <= lo;
        let span = hi as f64 - lo as f64;
        for v in out.band_mut(c) {
            *v = if constant {
                0.0
            } else {
                (2.0 * (*v as f64 - lo as f64) / span - 1.0).clamp(-1.0, 1.0) as f32
            };
        }
        ranges.push(ChannelRange {
            min: lo,
            max: hi,
            constant,
        });
    }
    NormalizedRaster {
        raster: out,
        ranges,
    }
}

/// Elementwise natural log of `max(x, floor)`, for bringing SAR intensities
/// closer to Gaussian before normalization.
pub fn log_transform(raster: &Raster, floor: f32) -> Raster {
    let mut out = raster.clone();
    for v in &mut out.data {
        *v = v.max(floor).ln();
    }
    out
}
