//! Synthetic image pairs with known change: a SAR-like image at the first
//! date (multiplicative gamma speckle) and an optical-like image at the second
//! date (additive Gaussian noise).

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::translators::{stream, Stream};

/// A generated pair and its ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub x: Raster,
    pub y: Raster,
    pub truth: Vec<bool>,
    /// Class of every pixel at the first date.
    pub classes_before: Vec<usize>,
    /// Class of every pixel at the second date.
    pub classes_after: Vec<usize>,
}

/// Noise levels. `looks == None` or `optical_sigma == 0` disable the
/// respective noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Noise {
    /// Shape `L` of the unit-mean Gamma(L, 1/L) speckle.
    pub looks: Option<f64>,
    pub optical_sigma: f64,
}

impl Default for Noise {
    fn default() -> Self {
        Self {
            looks: Some(5.0),
            optical_sigma: 0.05,
        }
    }
}

impl Noise {
    pub fn none() -> Self {
        Self {
            looks: None,
            optical_sigma: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(l) = self.looks {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::config("speckle looks must be positive"));
            }
        }
        if !(self.optical_sigma >= 0.0 && self.optical_sigma.is_finite()) {
            return Err(Error::config("optical noise must be nonnegative"));
        }
        Ok(())
    }
}

/// Multiplies every value by independent unit-mean gamma noise.
pub fn speckle<R: Rng + ?Sized>(values: &mut [f32], looks: f64, rng: &mut R) -> Result<()> {
    let g = Gamma::new(looks, 1.0 / looks).map_err(|e| Error::config(e.to_string()))?;
    for v in values {
        *v *= g.sample(rng) as f32;
    }
    Ok(())
}

fn gaussian<R: Rng + ?Sized>(values: &mut [f32], sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    let n = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    for v in values {
        *v += n.sample(rng) as f32;
    }
}

/// Side of the toy pair.
pub const TOY_SIZE: usize = 8;
/// Channels of both toy images.
pub const TOY_CHANNELS: usize = 3;
const TOY_SAR_LOW: f32 = 0.1;
const TOY_SAR_HIGH: f32 = 0.8;
const TOY_OPTICAL_LOW: f32 = 0.2;
const TOY_OPTICAL_HIGH: f32 = 0.7;

/// Polarimetric SAR intensities of each toy class: one bright channel per
/// class, or all channels bright. After a log transform the four classes are
/// pairwise equidistant.
pub fn toy_sar_means() -> [[f32; TOY_CHANNELS]; 4] {
    let (l, h) = (TOY_SAR_LOW, TOY_SAR_HIGH);
    [[h, l, l], [l, h, l], [l, l, h], [h, h, h]]
}

/// Optical reflectances of each toy class, again pairwise equidistant but
/// with a class-to-signature assignment unrelated to the SAR one.
pub fn toy_optical_means() -> [[f32; TOY_CHANNELS]; 4] {
    let (l, h) = (TOY_OPTICAL_LOW, TOY_OPTICAL_HIGH);
    [[h, h, l], [l, l, l], [l, h, h], [h, l, h]]
}

/// Noise used by [`make_toy`].
pub fn toy_noise() -> Noise {
    Noise {
        looks: Some(TOY_LOOKS),
        optical_sigma: 0.03,
    }
}

/// Speckle shape of the toy pair.
pub const TOY_LOOKS: f64 = 20.0;

/// Class layout of the toy pair before and after the change. Four 4x4
/// blocks hold classes 0..4; the bottom-right 2x2 corner of every block
/// changes. Within block `c` the four corner pixels take classes `c+1, c+2,
/// c+3, c+1 (mod 4)`, so every ordered pair of distinct classes occurs.
pub fn toy_layout() -> (Vec<usize>, Vec<usize>) {
    let n = TOY_SIZE;
    let mut before = vec![0; n * n];
    let mut after = vec![0; n * n];
    for r in 0..n {
        for c in 0..n {
            let class = (r / 4) * 2 + c / 4;
            before[r * n + c] = class;
            let (br, bc) = (r % 4, c % 4);
            after[r * n + c] = if br >= 2 && bc >= 2 {
                let j = (br - 2) * 2 + (bc - 2);
                (class + 1 + j % 3) % 4
            } else {
                class
            };
        }
    }
    (before, after)
}

pub fn make_toy(seed: u64) -> Result<SyntheticPair> {
    make_toy_with(seed, &toy_noise())
}

pub fn make_toy_with(seed: u64, noise: &Noise) -> Result<SyntheticPair> {
    noise.validate()?;
    let (before, after) = toy_layout();
    render(
        TOY_SIZE,
        TOY_SIZE,
        &before,
        &after,
        &toy_sar_means().map(|m| m.to_vec()),
        &toy_optical_means().map(|m| m.to_vec()),
        noise,
        seed,
    )
}

#[allow(clippy::too_many_arguments)]
fn render(
    height: usize,
    width: usize,
    before: &[usize],
    after: &[usize],
    x_means: &[Vec<f32>],
    y_means: &[Vec<f32>],
    noise: &Noise,
    noise_seed: u64,
) -> Result<SyntheticPair> {
    let mut rng = stream(noise_seed, Stream::Sampling);
    let cx = x_means[0].len();
    let cy = y_means[0].len();
    let mut x = Raster::from_fn(height, width, cx, |ch, r, c| x_means[before[r * width + c]][ch]);
    let mut y = Raster::from_fn(height, width, cy, |ch, r, c| y_means[after[r * width + c]][ch]);
    for ch in 0..cx {
        if let Some(l) = noise.looks {
            speckle(x.band_mut(ch), l, &mut rng)?;
        }
    }
    for ch in 0..cy {
        gaussian(y.band_mut(ch), noise.optical_sigma, &mut rng);
    }
    let truth = before.iter().zip(after).map(|(a, b)| a != b).collect();
    Ok(SyntheticPair {
        x,
        y,
        truth,
        classes_before: before.to_vec(),
        classes_after: after.to_vec(),
    })
}

/// Parameters of a larger synthetic scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    /// Target fraction of changed pixels; the result may overshoot slightly.
    pub change_fraction: f64,
    pub optical_channels: usize,
    pub noise: Noise,
    /// Seed of the class layout and change regions.
    pub seed: u64,
    /// Seed of the noise; defaults to `seed`.
    pub noise_seed: Option<u64>,
    /// When set, every change region turns into this class (think of a
    /// flood); otherwise each region shifts its classes by a random offset.
    pub change_target: Option<usize>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            n_classes: 4,
            change_fraction: 0.1,
            optical_channels: 3,
            noise: Noise::default(),
            seed: 0,
            noise_seed: None,
            change_target: None,
        }
    }
}

/// Per-class means. SAR intensities are geometrically spaced (evenly spaced
/// after a log transform). Optical channel 0 is a random non-monotone
/// permutation of evenly spaced levels (for three or more classes); the other
/// channels alternate between the increasing and the decreasing ordering.
fn class_means(n: usize, cy: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
    let level = |i: usize| 0.1 + 0.8 * i as f32 / (n - 1) as f32;
    let sar = |i: usize| 0.05 * 16f32.powf(i as f32 / (n - 1) as f32);
    let x = (0..n).map(|c| vec![sar(c)]).collect();
    let mut first: Vec<usize> = (0..n).collect();
    loop {
        first.shuffle(rng);
        let inc = first.windows(2).all(|w| w[0] < w[1]);
        let dec = first.windows(2).all(|w| w[0] > w[1]);
        if n < 3 || !(inc || dec) {
            break;
        }
    }
    let y = (0..n)
        .map(|c| {
            (0..cy)
                .map(|ch| match ch {
                    0 => level(first[c]),
                    ch if ch % 2 == 1 => level(c),
                    _ => level(n - 1 - c),
                })
                .collect()
        })
        .collect();
    (x, y)
}

pub fn make_scene(spec: &SceneSpec) -> Result<SyntheticPair> {
    if spec.n_classes < 2 {
        return Err(Error::config("a scene needs at least two classes"));
    }
    if spec.height < 2 || spec.width < 2 || spec.optical_channels == 0 {
        return Err(Error::config("scene must be at least 2x2 with an optical channel"));
    }
    if !(0.0..1.0).contains(&spec.change_fraction) {
        return Err(Error::config("change fraction must lie in [0, 1)"));
    }
    spec.noise.validate()?;
    if spec.change_target.is_some_and(|t| t >= spec.n_classes) {
        return Err(Error::config("change target is not a valid class"));
    }
    let (h, w, n) = (spec.height, spec.width, spec.n_classes);
    let mut rng = stream(spec.seed, Stream::Init);
    let (x_means, y_means) = class_means(n, spec.optical_channels, &mut rng);

    // Voronoi regions with random classes.
    let sites = ((h * w) / 400).max(2 * n);
    let centers: Vec<(f64, f64, usize)> = (0..sites)
        .map(|i| {
            let class = if i < n { i } else { rng.random_range(0..n) };
            (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64), class)
        })
        .collect();
    let before: Vec<usize> = (0..h * w)
        .map(|p| {
            let (r, c) = ((p / w) as f64, (p % w) as f64);
            centers
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - r).powi(2) + (a.1 - c).powi(2);
                    let db = (b.0 - r).powi(2) + (b.1 - c).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap()
                .2
        })
        .collect();

    // Changes: discs whose pixels switch to another class.
    let mut after = before.clone();
    let target = (spec.change_fraction * (h * w) as f64).round() as usize;
    if let Some(t) = spec.change_target {
        let available = before.iter().filter(|&&c| c != t).count();
        if available < target {
            return Err(Error::config(format!(
                "only {available} pixels can change into class {t}, {target} requested"
            )));
        }
    }
    let max_radius = (h.min(w) as f64 / 12.0).max(1.5);
    let mut changed = 0;
    while changed < target {
        let (cr, cc) = (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64);
        let radius = rng.random_range(1.0..=max_radius);
        let shift = rng.random_range(1..n);
        let (r0, r1) = ((cr - radius).max(0.0) as usize, ((cr + radius) as usize).min(h - 1));
        let (c0, c1) = ((cc - radius).max(0.0) as usize, ((cc + radius) as usize).min(w - 1));
        for r in r0..=r1 {
            for c in c0..=c1 {
                let p = r * w + c;
                let inside = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2) <= radius * radius;
                let new_class = spec.change_target.unwrap_or((before[p] + shift) % n);
                if inside && after[p] == before[p] && new_class != before[p] && changed < target {
                    after[p] = new_class;
                    changed += 1;
                }
            }
        }
    }
    render(
        h,
        w,
        &before,
        &after,
        &x_means,
        &y_means,
        &spec.noise,
        spec.noise_seed.unwrap_or(spec.seed),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn toy_has_sixteen_changes_and_all_transitions() {
        let t = make_toy(0).unwrap();
        assert_eq!(t.truth.iter().filter(|&&c| c).count(), 16);
        let pairs: HashSet<(usize, usize)> = t
            .classes_before
            .iter()
            .zip(&t.classes_after)
            .filter(|(a, b)| a != b)
            .map(|(&a, &b)| (a, b))
            .collect();
        assert_eq!(pairs.len(), 12);
    }

    #[test]
    fn noiseless_toy_blocks_are_constant() {
        let t = make_toy_with(3, &Noise::none()).unwrap();
        for ch in 0..TOY_CHANNELS {
            for (i, &class) in t.classes_before.iter().enumerate() {
                assert_eq!(t.x.band(ch)[i], toy_sar_means()[class][ch]);
                assert_eq!(t.y.band(ch)[i], toy_optical_means()[t.classes_after[i]][ch]);
            }
        }
    }

    #[test]
    fn scene_is_deterministic_and_truth_ignores_noise() {
        let spec = SceneSpec {
            height: 40,
            width: 48,
            seed: 9,
            ..SceneSpec::default()
        };
        let a = make_scene(&spec).unwrap();
        let b = make_scene(&spec).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        let c = make_scene(&SceneSpec {
            noise_seed: Some(77),
            ..spec.clone()
        })
        .unwrap();
        assert_eq!(a.truth, c.truth);
        assert_ne!(a.x, c.x);
        let frac = a.truth.iter().filter(|&&t| t).count() as f64 / a.truth.len() as f64;
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
    }

    #[test]
    fn scene_changes_switch_class() {
        let s = make_scene(&SceneSpec {
            height: 32,
            width: 32,
            seed: 4,
            ..SceneSpec::default()
        })
        .unwrap();
        for i in 0..s.truth.len() {
            assert_eq!(s.truth[i], s.classes_before[i] != s.classes_after[i]);
        }
    }

    #[test]
    fn class_means_are_distinct_and_non_monotone() {
        for seed in 0..20 {
            let mut rng = stream(seed, Stream::Init);
            let (x, y) = class_means(5, 3, &mut rng);
            let first: Vec<f32> = y.iter().map(|m| m[0]).collect();
            let inc = first.windows(2).all(|w| w[0] < w[1]);
            let dec = first.windows(2).all(|w| w[0] > w[1]);
            assert!(!inc && !dec);
            for ch in 0..3 {
                let mut v: Vec<f32> = y.iter().map(|m| m[ch]).collect();
                v.sort_by(f32::total_cmp);
                v.dedup();
                assert_eq!(v.len(), 5);
            }
            assert!(x.windows(2).all(|w| w[0][0] < w[1][0]));
        }
    }

    #[test]
    fn rejects_single_class() {
        let spec = SceneSpec {
            n_classes: 1,
            ..SceneSpec::default()
        };
        assert!(make_scene(&spec).is_err());
    }
}
