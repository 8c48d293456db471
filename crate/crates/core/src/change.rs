//! From translated images to a binary change map.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Per-pixel Euclidean norm of `a - b` across channels.
pub fn distance_image(a: &Raster, b: &Raster) -> Result<Vec<f64>> {
    if !a.same_grid(b) || a.channels() != b.channels() {
        return Err(Error::shape("distance image needs rasters of identical shape"));
    }
    let n = a.pixel_count();
    let mut acc = vec![0.0f64; n];
    for c in 0..a.channels() {
        for ((s, &p), &q) in acc.iter_mut().zip(a.band(c)).zip(b.band(c)) {
            let d = p as f64 - q as f64;
            *s += d * d;
        }
    }
    acc.iter_mut().for_each(|s| *s = s.sqrt());
    Ok(acc)
}

/// `(||x_hat - x||, ||y_hat - y||)` per pixel.
pub fn distance_images(
    x: &Raster,
    x_hat: &Raster,
    y: &Raster,
    y_hat: &Raster,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !x.same_grid(y) {
        return Err(Error::shape("x and y are not on the same grid"));
    }
    Ok((distance_image(x_hat, x)?, distance_image(y_hat, y)?))
}

/// Result of [`clip_normalize`]. `constant` marks an input with no spread,
/// which maps to all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    pub constant: bool,
}

/// Clips values above `mean + 3 sigma` and rescales to `[0, 1]`.
pub fn clip_normalize(values: &[f64]) -> Normalized {
    if values.is_empty() {
        return Normalized {
            values: Vec::new(),
            constant: true,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let cap = mean + 3.0 * var.sqrt();
    let clipped: Vec<f64> = values.iter().map(|&v| v.min(cap)).collect();
    let lo = clipped.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = clipped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Normalized {
            values: vec![0.0; values.len()],
            constant: true,
        };
    }
    let span = hi - lo;
    Normalized {
        values: clipped.iter().map(|v| (v - lo) / span).collect(),
        constant: false,
    }
}

/// Continuous change evidence at each stage of extraction.
#[derive(Clone, Debug)]
pub struct DifferenceImage {
    pub height: usize,
    pub width: usize,
    pub raw_x: Vec<f64>,
    pub raw_y: Vec<f64>,
    /// Average of the two clip-normalized distance images, in `[0, 1]`.
    pub combined: Vec<f64>,
    /// Set when either distance image had no spread.
    pub degenerate: bool,
}

impl DifferenceImage {
    pub fn new(height: usize, width: usize, raw_x: Vec<f64>, raw_y: Vec<f64>) -> Result<Self> {
        if raw_x.len() != height * width || raw_y.len() != height * width {
            return Err(Error::shape("distance images do not match the grid"));
        }
        let (combined, degenerate) = combine(&raw_x, &raw_y)?;
        Ok(Self {
            height,
            width,
            raw_x,
            raw_y,
            combined,
            degenerate,
        })
    }

    pub fn from_translations(
        x: &Raster,
        x_hat: &Raster,
        y: &Raster,
        y_hat: &Raster,
    ) -> Result<Self> {
        let (dx, dy) = distance_images(x, x_hat, y, y_hat)?;
        Self::new(x.height(), x.width(), dx, dy)
    }

    pub fn combined_raster(&self) -> Raster {
        let v = self.combined.iter().map(|&v| v as f32).collect();
        Raster::from_band(self.height, self.width, v).expect("grid size checked at construction")
    }
}

/// Clip-normalizes both distance images and averages them. The flag reports
/// whether either input was constant.
pub fn combine(dx: &[f64], dy: &[f64]) -> Result<(Vec<f64>, bool)> {
    if dx.len() != dy.len() {
        return Err(Error::shape("distance images differ in size"));
    }
    let (a, b) = (clip_normalize(dx), clip_normalize(dy));
    let d = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(p, q)| 0.5 * (p + q))
        .collect();
    Ok((d, a.constant || b.constant))
}

/// Windowed bilateral mean-field smoothing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterConfig {
    pub radius: usize,
    pub spatial_sigma: f64,
    pub range_width: f64,
    pub iterations: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            radius: 2,
            spatial_sigma: 1.0,
            range_width: 0.1,
            iterations: 5,
        }
    }
}

impl FilterConfig {
    /// A filter that returns its input.
    pub fn identity() -> Self {
        Self {
            iterations: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spatial_sigma > 0.0) || !(self.range_width > 0.0) {
            return Err(Error::config("filter widths must be positive"));
        }
        Ok(())
    }
}

/// Each iteration replaces every value by the normalized average of its
/// `(2r+1)^2` neighbourhood, weighted by spatial distance and by similarity
/// of values. Results stay within the input's range.
pub fn spatial_filter(values: &[f64], height: usize, width: usize, cfg: &FilterConfig) -> Result<Vec<f64>> {
    if values.len() != height * width {
        return Err(Error::shape("filter input does not match the grid"));
    }
    cfg.validate()?;
    let r = cfg.radius as isize;
    let side = 2 * cfg.radius + 1;
    let spatial: Vec<f64> = (0..side * side)
        .map(|k| {
            let (dy, dx) = ((k / side) as isize - r, (k % side) as isize - r);
            (-((dy * dy + dx * dx) as f64) / (2.0 * cfg.spatial_sigma * cfg.spatial_sigma)).exp()
        })
        .collect();
    let inv_range = 1.0 / (2.0 * cfg.range_width * cfg.range_width);
    let (h, w) = (height as isize, width as isize);
    let mut cur = values.to_vec();
    let mut next = vec![0.0; cur.len()];
    for _ in 0..cfg.iterations {
        next.par_chunks_mut(width.max(1)).enumerate().for_each(|(row, out)| {
            let row = row as isize;
            for (col, o) in out.iter_mut().enumerate() {
                let col = col as isize;
                let center = cur[(row * w + col) as usize];
                let (mut num, mut den) = (0.0, 0.0);
                for dy in -r..=r {
                    let rr = row + dy;
                    if rr < 0 || rr >= h {
                        continue;
                    }
                    for dx in -r..=r {
                        let cc = col + dx;
                        if cc < 0 || cc >= w {
                            continue;
                        }
                        let v = cur[(rr * w + cc) as usize];
                        let k = ((dy + r) as usize) * side + (dx + r) as usize;
                        let wt = spatial[k] * (-(v - center) * (v - center) * inv_range).exp();
                        num += wt * v;
                        den += wt;
                    }
                }
                *o = num / den;
            }
        });
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(cur)
}

pub const OTSU_BINS: usize = 256;

/// Histogram of `values` over `[min, max]` with [`OTSU_BINS`] equal bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0u64; OTSU_BINS];
        if max > min {
            for &v in values {
                counts[Self::bin_of(v, min, max)] += 1;
            }
        } else if !values.is_empty() {
            counts[0] = values.len() as u64;
        }
        Self { min, max, counts }
    }

    fn bin_of(v: f64, min: f64, max: f64) -> usize {
        let b = ((v - min) / (max - min) * OTSU_BINS as f64).floor();
        (b.max(0.0) as usize).min(OTSU_BINS - 1)
    }

    pub fn bin(&self, v: f64) -> usize {
        if self.max > self.min {
            Self::bin_of(v, self.min, self.max)
        } else {
            0
        }
    }
}

/// Index `t` in `1..256` maximizing between-class variance when bins `< t`
/// form the lower class; the smallest maximizer wins. `None` when fewer than
/// two bins are occupied.
pub fn otsu_bin(counts: &[u64]) -> Option<usize> {
    let total: u64 = counts.iter().sum();
    let sum_all: u128 = counts
        .iter()
        .enumerate()
        .map(|(b, &c)| b as u128 * c as u128)
        .sum();
    let (mut n_lo, mut s_lo) = (0u64, 0u128);
    let mut best: Option<(usize, f64)> = None;
    for t in 1..counts.len() {
        n_lo += counts[t - 1];
        s_lo += (t as u128 - 1) * counts[t - 1] as u128;
        if n_lo == 0 || n_lo == total {
            continue;
        }
        // N^2 * between-class variance = (N S_t - n_t S_T)^2 / (n_t (N - n_t))
        let num = total as i128 * s_lo as i128 - n_lo as i128 * sum_all as i128;
        let num = num as f64;
        let score = num * num / (n_lo as f64 * (total - n_lo) as f64);
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((t, score));
        }
    }
    best.map(|(t, _)| t)
}

/// Threshold separating the two Otsu classes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold {
    /// Smallest value assigned to the upper class, so that the change map is
    /// exactly `d >= value`.
    pub value: f64,
    /// Winning histogram bin, or `None` for constant input.
    pub bin: Option<usize>,
    pub degenerate: bool,
}

pub fn otsu_threshold(values: &[f64]) -> Result<Threshold> {
    if values.is_empty() {
        return Err(Error::shape("cannot threshold an empty image"));
    }
    let hist = Histogram::new(values);
    match otsu_bin(&hist.counts) {
        Some(t) => {
            let value = values
                .iter()
                .copied()
                .filter(|&v| hist.bin(v) >= t)
                .fold(f64::INFINITY, f64::min);
            Ok(Threshold {
                value,
                bin: Some(t),
                degenerate: false,
            })
        }
        None => Ok(Threshold {
            value: hist.min,
            bin: None,
            degenerate: true,
        }),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChangeMap {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
    pub threshold: Threshold,
}

impl ChangeMap {
    pub fn from_threshold(values: &[f64], height: usize, width: usize) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape("change values do not match the grid"));
        }
        let threshold = otsu_threshold(values)?;
        let mask = values.iter().map(|&v| v >= threshold.value).collect();
        Ok(Self {
            height,
            width,
            mask,
            threshold,
        })
    }
}

pub const TRUE_POSITIVE: [u8; 3] = [255, 255, 255];
pub const TRUE_NEGATIVE: [u8; 3] = [0, 0, 0];
pub const FALSE_NEGATIVE: [u8; 3] = [255, 0, 0];
pub const FALSE_POSITIVE: [u8; 3] = [0, 255, 0];

/// Colors each pixel by its confusion class.
pub fn confusion_map(mask: &[bool], truth: &[bool]) -> Result<Vec<[u8; 3]>> {
    if mask.len() != truth.len() {
        return Err(Error::shape("mask and truth differ in size"));
    }
    Ok(mask
        .iter()
        .zip(truth)
        .map(|(&m, &t)| match (m, t) {
            (true, true) => TRUE_POSITIVE,
            (false, false) => TRUE_NEGATIVE,
            (false, true) => FALSE_NEGATIVE,
            (true, false) => FALSE_POSITIVE,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distances() {
        let x = Raster::from_band(1, 1, vec![0.2]).unwrap();
        let xh = Raster::from_band(1, 1, vec![0.5]).unwrap();
        assert!((distance_image(&xh, &x).unwrap()[0] - 0.3).abs() < 1e-7);
        assert_eq!(distance_image(&x, &x).unwrap(), vec![0.0]);
        let a = Raster::new(1, 1, 2, vec![0.3, 0.4]).unwrap();
        let z = Raster::zeros(1, 1, 2);
        assert!((distance_image(&a, &z).unwrap()[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn outlier_is_clipped_before_scaling() {
        let mut v = vec![0.0; 10_000];
        v.push(1000.0);
        let n = v.len() as f64;
        let mean = 1000.0 / n;
        let var = (10_000.0 * mean * mean + (1000.0 - mean).powi(2)) / n;
        let cap = mean + 3.0 * var.sqrt();
        assert!(cap < 1000.0);
        let out = clip_normalize(&v);
        assert_eq!(out.values[10_000], 1.0);
        assert!(out.values[..10_000].iter().all(|&x| x == 0.0));
        // Put a value between to see where the cap landed.
        let mut w = v.clone();
        w[0] = cap / 2.0;
        let out = clip_normalize(&w);
        assert!((out.values[0] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn spread_data_is_plain_min_max() {
        let v = [0.2, 0.4, 0.3, 0.25, 0.35];
        let out = clip_normalize(&v);
        let expect = [0.0, 1.0, 0.5, 0.25, 0.75];
        for (a, b) in out.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = clip_normalize(&[0.7; 4]);
        assert!(c.constant);
        assert_eq!(c.values, vec![0.0; 4]);
    }

    #[test]
    fn single_sided_evidence_is_suppressed() {
        let dx = [1.0, 1.0, 0.0, 0.0];
        let dy = [1.0, 0.0, 0.0, 1.0];
        let (d, degenerate) = combine(&dx, &dy).unwrap();
        assert!(!degenerate);
        assert_eq!(d[0], 1.0);
        assert_eq!(d[1], 0.5);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn common_scale_leaves_combination_unchanged() {
        let dx = [0.1, 0.5, 0.9, 0.2, 0.0, 0.3];
        let dy = [0.4, 0.1, 0.7, 0.8, 0.2, 0.6];
        let sx: Vec<f64> = dx.iter().map(|v| v * 4.0).collect();
        let sy: Vec<f64> = dy.iter().map(|v| v * 4.0).collect();
        assert_eq!(combine(&dx, &dy).unwrap(), combine(&sx, &sy).unwrap());
    }

    #[test]
    fn filter_keeps_constants_and_range() {
        let v = vec![0.4; 30];
        let out = spatial_filter(&v, 5, 6, &FilterConfig::default()).unwrap();
        assert!(out.iter().all(|&x| (x - 0.4).abs() < 1e-15));
        let ramp: Vec<f64> = (0..30).map(|i| (i * 7 % 11) as f64 / 10.0).collect();
        let out = spatial_filter(&ramp, 5, 6, &FilterConfig::default()).unwrap();
        let lo = ramp.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ramp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(out.iter().all(|&x| x >= lo && x <= hi));
        let id = spatial_filter(&ramp, 5, 6, &FilterConfig::identity()).unwrap();
        assert_eq!(id, ramp);
    }

    #[test]
    fn spike_first_iteration_by_hand() {
        let (h, w) = (9, 9);
        let mut v = vec![0.0; h * w];
        v[4 * w + 4] = 0.1;
        let one = FilterConfig {
            iterations: 1,
            ..FilterConfig::default()
        };
        let out = spatial_filter(&v, h, w, &one).unwrap();
        // Center: every neighbour differs by 0.1 -> range weight e^-0.5.
        let mut den = 0.0;
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                let s = (-((dy * dy + dx * dx) as f64) / 2.0).exp();
                den += if dy == 0 && dx == 0 { 1.0 } else { s * (-0.5f64).exp() };
            }
        }
        assert!((out[4 * w + 4] - 0.1 / den).abs() < 1e-12);
        let five = spatial_filter(&v, h, w, &FilterConfig::default()).unwrap();
        assert!(five[4 * w + 4] <= 0.05);
    }

    #[test]
    fn step_edges_are_stable() {
        let (h, w) = (8, 10);
        let step: Vec<f64> = (0..h * w).map(|i| if i % w >= 5 { 1.0 } else { 0.0 }).collect();
        let once = spatial_filter(&step, h, w, &FilterConfig::default()).unwrap();
        let twice = spatial_filter(&once, h, w, &FilterConfig::default()).unwrap();
        for ((a, b), c) in step.iter().zip(&once).zip(&twice) {
            assert!((a - b).abs() <= 0.05);
            assert!((b - c).abs() <= 0.05);
        }
    }

    #[test]
    fn bimodal_threshold() {
        let mut v = vec![0.1; 50];
        v.extend(vec![0.9; 50]);
        let t = otsu_threshold(&v).unwrap();
        assert!(t.value > 0.1 && t.value <= 0.9);
        assert_eq!(t.bin, Some(1));
        let map = ChangeMap::from_threshold(&v, 10, 10).unwrap();
        assert_eq!(map.mask.iter().filter(|&&m| m).count(), 50);
    }

    #[test]
    fn constant_threshold_is_flagged() {
        let t = otsu_threshold(&[0.3; 9]).unwrap();
        assert!(t.degenerate);
        assert_eq!(t.value, 0.3);
    }

    #[test]
    fn confusion_colors() {
        let mask = [true, false, false, true];
        let truth = [true, false, true, false];
        let c = confusion_map(&mask, &truth).unwrap();
        assert_eq!(c, vec![TRUE_POSITIVE, TRUE_NEGATIVE, FALSE_NEGATIVE, FALSE_POSITIVE]);
        let same = confusion_map(&truth, &truth).unwrap();
        assert!(same.iter().all(|p| *p == TRUE_POSITIVE || *p == TRUE_NEGATIVE));
        let inv: Vec<bool> = truth.iter().map(|t| !t).collect();
        let flip = confusion_map(&inv, &truth).unwrap();
        assert!(flip.iter().all(|p| *p == FALSE_NEGATIVE || *p == FALSE_POSITIVE));
    }
}
