//! Per-pixel change prior from domain-specific affinity matrices.
//!
//! For every `k x k` window the pixels of each image form a fully connected
//! graph with Gaussian affinities. The absolute difference of the two
//! affinity matrices is the adjacency matrix of a "change graph"; the degree
//! of each vertex, divided by `k^2`, is that pixel's change score for the
//! window. Scores from all windows covering a pixel are averaged.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{downsample2, NormalizedRaster, Raster};

/// Floor applied to the kernel width of a patch whose pixels are all identical.
pub const DEGENERATE_WIDTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffinityConfig {
    pub patch_size: usize,
    pub stride: usize,
    /// Fraction of `k^2` giving the neighbour rank used for the kernel width.
    pub knn_fraction: f64,
    pub multiscale: bool,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        Self {
            patch_size: 20,
            stride: 5,
            knn_fraction: 0.75,
            multiscale: true,
        }
    }
}

impl AffinityConfig {
    pub fn single_scale(patch_size: usize, stride: usize) -> Self {
        Self {
            patch_size,
            stride,
            multiscale: false,
            ..Self::default()
        }
    }

    /// Neighbour rank `K = round(fraction * k^2)`, clamped to `[1, k^2 - 1]`.
    pub fn knn(&self) -> usize {
        let n = self.patch_size * self.patch_size;
        ((self.knn_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 2 {
            return Err(Error::config("patch size must be at least 2"));
        }
        if self.stride == 0 || self.stride > self.patch_size {
            return Err(Error::config(format!(
                "stride must lie in [1, {}], got {}",
                self.patch_size, self.stride
            )));
        }
        if !(self.knn_fraction > 0.0 && self.knn_fraction < 1.0) {
            return Err(Error::config("knn fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Pixel feature vectors of one window, stored pixel-major.
#[derive(Clone, Debug)]
pub struct Patch {
    pixels: usize,
    channels: usize,
    features: Vec<f64>,
}

impl Patch {
    pub fn new(channels: usize, features: Vec<f64>) -> Result<Self> {
        if channels == 0 || features.len() % channels != 0 {
            return Err(Error::shape("feature length is not a multiple of channels"));
        }
        Ok(Self {
            pixels: features.len() / channels,
            channels,
            features,
        })
    }

    /// Extracts the `k x k` window with top-left corner `(row, col)`.
    pub fn from_raster(raster: &Raster, row: usize, col: usize, k: usize) -> Self {
        let c = raster.channels();
        let mut features = Vec::with_capacity(k * k * c);
        for i in 0..k {
            for j in 0..k {
                for ch in 0..c {
                    features.push(raster.get(ch, row + i, col + j) as f64);
                }
            }
        }
        Self {
            pixels: k * k,
            channels: c,
            features,
        }
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    fn pixel(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    /// Full symmetric matrix of squared Euclidean distances.
    pub fn squared_distances(&self) -> Vec<f64> {
        let n = self.pixels;
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            let a = self.pixel(i);
            for j in i + 1..n {
                let s: f64 = a
                    .iter()
                    .zip(self.pixel(j))
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum();
                d[i * n + j] = s;
                d[j * n + i] = s;
            }
        }
        d
    }
}

/// Kernel width of a patch and whether the degenerate floor was applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelWidth {
    pub value: f64,
    pub degenerate: bool,
}

fn width_from_distances(sq: &[f64], n: usize, knn: usize) -> KernelWidth {
    let mut row = Vec::with_capacity(n - 1);
    let mut total = 0.0;
    for i in 0..n {
        row.clear();
        row.extend(
            sq[i * n..(i + 1) * n]
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v),
        );
        let (_, kth, _) = row.select_nth_unstable_by(knn - 1, |a, b| a.total_cmp(b));
        total += kth.sqrt();
    }
    let mean = total / n as f64;
    if mean > 0.0 {
        KernelWidth {
            value: mean,
            degenerate: false,
        }
    } else {
        KernelWidth {
            value: DEGENERATE_WIDTH,
            degenerate: true,
        }
    }
}

/// Mean over pixels of the distance to the `knn`-th nearest other pixel.
pub fn kernel_width(patch: &Patch, knn: usize) -> Result<KernelWidth> {
    let n = patch.pixels();
    if n < 2 || knn == 0 || knn > n - 1 {
        return Err(Error::config(format!(
            "neighbour rank {knn} invalid for a patch of {n} pixels"
        )));
    }
    Ok(width_from_distances(&patch.squared_distances(), n, knn))
}

/// Dense affinity matrix `A[i][j] = exp(-d_ij^2 / h^2)`.
pub fn patch_affinity(patch: &Patch, width: f64) -> Vec<f64> {
    let h2 = width * width;
    patch
        .squared_distances()
        .into_iter()
        .map(|d| (-d / h2).exp())
        .collect()
}

/// Normalized vertex degrees of `|Ax - Ay|`: `alpha_i = sum_j |Ax_ij - Ay_ij| / n`.
pub fn patch_alpha(ax: &[f64], ay: &[f64]) -> Result<Vec<f64>> {
    if ax.len() != ay.len() {
        return Err(Error::shape(format!(
            "affinity matrices differ in size: {} vs {}",
            ax.len(),
            ay.len()
        )));
    }
    let n = (ax.len() as f64).sqrt().round() as usize;
    if n * n != ax.len() {
        return Err(Error::shape("affinity matrix is not square"));
    }
    Ok((0..n)
        .map(|i| {
            let row: f64 = (0..n)
                .map(|j| (ax[i * n + j] - ay[i * n + j]).abs())
                .sum();
            row / n as f64
        })
        .collect())
}

/// Change scores of one window pair, plus how many of the two kernel widths
/// hit the degenerate floor.
fn window_alpha(px: &Patch, py: &Patch, knn: usize) -> (Vec<f64>, usize) {
    let n = px.pixels();
    let dx = px.squared_distances();
    let dy = py.squared_distances();
    let hx = width_from_distances(&dx, n, knn);
    let hy = width_from_distances(&dy, n, knn);
    let (ix, iy) = (1.0 / (hx.value * hx.value), 1.0 / (hy.value * hy.value));
    // D is symmetric with a zero diagonal: visit each pair once.
    let mut degree = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let diff = ((-dx[i * n + j] * ix).exp() - (-dy[i * n + j] * iy).exp()).abs();
            degree[i] += diff;
            degree[j] += diff;
        }
    }
    let scale = 1.0 / n as f64;
    degree.iter_mut().for_each(|v| *v *= scale);
    (degree, hx.degenerate as usize + hy.degenerate as usize)
}

/// Top-left anchors along one axis: `0, stride, 2 stride, ...`, plus a final
/// anchor at `len - k` when the stride does not land there.
pub fn anchors(len: usize, k: usize, stride: usize) -> Vec<usize> {
    if k > len || stride == 0 {
        return Vec::new();
    }
    let last = len - k;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

/// Number of windows visited on an `height x width` grid.
pub fn patch_count(height: usize, width: usize, k: usize, stride: usize) -> usize {
    anchors(height, k, stride).len() * anchors(width, k, stride).len()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorMap {
    height: usize,
    width: usize,
    alpha: Vec<f64>,
    counts: Vec<u32>,
    patches: usize,
    degenerate_widths: usize,
}

impl PriorMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Windows covering each pixel.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Windows processed.
    pub fn patches(&self) -> usize {
        self.patches
    }

    /// Kernel widths that fell back to [`DEGENERATE_WIDTH`].
    pub fn degenerate_widths(&self) -> usize {
        self.degenerate_widths
    }

    pub fn to_raster(&self) -> Raster {
        Raster::from_fn(self.height, self.width, 1, |_, r, c| {
            self.alpha[r * self.width + c] as f32
        })
    }

    /// Wraps an externally computed alpha map (values clamped to [0, 1]).
    pub fn from_raster(raster: &Raster) -> Result<Self> {
        if raster.channels() != 1 {
            return Err(Error::shape("a prior map must have exactly one channel"));
        }
        Ok(Self {
            height: raster.height(),
            width: raster.width(),
            alpha: raster
                .data()
                .iter()
                .map(|&v| (v as f64).clamp(0.0, 1.0))
                .collect(),
            counts: vec![1; raster.pixel_count()],
            patches: 0,
            degenerate_widths: 0,
        })
    }
}

const CHUNK: usize = 256;

fn check_pair(x: &Raster, y: &Raster, k: usize) -> Result<()> {
    if !x.same_grid(y) {
        return Err(Error::shape(format!(
            "images differ in size: {}x{} vs {}x{}",
            x.height(),
            x.width(),
            y.height(),
            y.width()
        )));
    }
    if k > x.height().min(x.width()) {
        return Err(Error::config(format!(
            "patch size {k} exceeds image size {}x{}",
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

fn prior_single(x: &Raster, y: &Raster, cfg: &AffinityConfig) -> Result<PriorMap> {
    cfg.validate()?;
    let k = cfg.patch_size;
    check_pair(x, y, k)?;
    let (h, w) = (x.height(), x.width());
    let knn = cfg.knn();
    let rows = anchors(h, k, cfg.stride);
    let cols = anchors(w, k, cfg.stride);
    let windows: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();

    let mut sum = vec![0.0f64; h * w];
    let mut counts = vec![0u32; h * w];
    let mut degenerate = 0;
    // Windows are scored in parallel; accumulation runs in window order so the
    // result does not depend on the schedule.
    for chunk in windows.chunks(CHUNK) {
        let scored: Vec<(Vec<f64>, usize)> = chunk
            .par_iter()
            .map(|&(r, c)| {
                let px = Patch::from_raster(x, r, c, k);
                let py = Patch::from_raster(y, r, c, k);
                window_alpha(&px, &py, knn)
            })
            .collect();
        for (&(r, c), (alpha, deg)) in chunk.iter().zip(scored) {
            degenerate += deg;
            for i in 0..k {
                for j in 0..k {
                    let p = (r + i) * w + c + j;
                    sum[p] += alpha[i * k + j];
                    counts[p] += 1;
                }
            }
        }
    }
    let alpha = sum
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s / n as f64)
        .collect();
    Ok(PriorMap {
        height: h,
        width: w,
        alpha,
        counts,
        patches: windows.len(),
        degenerate_widths: degenerate,
    })
}

/// Single-scale prior with the configured window size and stride.
pub fn compute_prior(
    x: &NormalizedRaster,
    y: &NormalizedRaster,
    cfg: &AffinityConfig,
) -> Result<PriorMap> {
    prior_single(x.raster(), y.raster(), cfg)
}

/// Unweighted mean of three priors: window `k/2` and `k` at full resolution,
/// and window `k` on 2x-downsampled images, resampled back to full size.
pub fn compute_prior_multiscale(
    x: &NormalizedRaster,
    y: &NormalizedRaster,
    cfg: &AffinityConfig,
) -> Result<PriorMap> {
    cfg.validate()?;
    let k = cfg.patch_size;
    if k % 2 != 0 || k < 4 {
        return Err(Error::config(format!(
            "multiscale prior needs an even patch size >= 4, got {k}"
        )));
    }
    let (xr, yr) = (x.raster(), y.raster());
    check_pair(xr, yr, k)?;
    let (h, w) = (xr.height(), xr.width());

    let small_cfg = AffinityConfig {
        patch_size: k / 2,
        stride: cfg.stride.min(k / 2),
        ..*cfg
    };
    let small = prior_single(xr, yr, &small_cfg)?;
    let full = prior_single(xr, yr, cfg)?;
    let (xd, yd) = (downsample2(xr), downsample2(yr));
    let coarse = prior_single(&xd, &yd, cfg)?;
    let coarse_alpha = upsample_f64(&coarse.alpha, coarse.height, coarse.width, h, w);

    let alpha = small
        .alpha
        .iter()
        .zip(&full.alpha)
        .zip(&coarse_alpha)
        .map(|((a, b), c)| ((a + b + c) / 3.0).clamp(0.0, 1.0))
        .collect();
    Ok(PriorMap {
        height: h,
        width: w,
        alpha,
        counts: full.counts,
        patches: small.patches + full.patches + coarse.patches,
        degenerate_widths: small.degenerate_widths + full.degenerate_widths + coarse.degenerate_widths,
    })
}

/// Corner-aligned bilinear resampling of an f64 map (same rule as
/// [`crate::raster::upsample_bilinear`], without the f32 round trip).
fn upsample_f64(src: &[f64], sh: usize, sw: usize, th: usize, tw: usize) -> Vec<f64> {
    let tap = |s: usize, t: usize, i: usize| -> (usize, usize, f64) {
        if s == 1 || t == 1 {
            return (0, 0, 0.0);
        }
        let x = i as f64 * (s - 1) as f64 / (t - 1) as f64;
        let lo = (x.floor() as usize).min(s - 1);
        (lo, (lo + 1).min(s - 1), x - lo as f64)
    };
    let mut out = Vec::with_capacity(th * tw);
    for r in 0..th {
        let (r0, r1, fy) = tap(sh, th, r);
        for c in 0..tw {
            let (c0, c1, fx) = tap(sw, tw, c);
            let top = src[r0 * sw + c0] + (src[r0 * sw + c1] - src[r0 * sw + c0]) * fx;
            let bot = src[r1 * sw + c0] + (src[r1 * sw + c1] - src[r1 * sw + c0]) * fx;
            out.push(top + (bot - top) * fy);
        }
    }
    out
}

/// Dispatches on `cfg.multiscale`.
pub fn prior(x: &NormalizedRaster, y: &NormalizedRaster, cfg: &AffinityConfig) -> Result<PriorMap> {
    if cfg.multiscale {
        compute_prior_multiscale(x, y, cfg)
    } else {
        compute_prior(x, y, cfg)
    }
}
