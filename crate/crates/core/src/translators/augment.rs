use rand::Rng;

use crate::nn::{Real, Tensor};

/// A square-patch symmetry: optional flips followed by quarter turns
/// (counter-clockwise).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Transform {
    pub flip_h: bool,
    pub flip_v: bool,
    pub quarter_turns: u8,
}

impl Transform {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Each flip with probability 1/2, rotation uniform over the four turns.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            flip_h: rng.random_bool(0.5),
            flip_v: rng.random_bool(0.5),
            quarter_turns: rng.random_range(0..4),
        }
    }

    /// Where pixel `(r, c)` of an `n x n` patch lands.
    pub fn map(&self, mut r: usize, mut c: usize, n: usize) -> (usize, usize) {
        if self.flip_h {
            c = n - 1 - c;
        }
        if self.flip_v {
            r = n - 1 - r;
        }
        for _ in 0..self.quarter_turns % 4 {
            (r, c) = (n - 1 - c, r);
        }
        (r, c)
    }

    /// Applies the transform to one `n x n` band.
    pub fn apply_band<T: Copy + Default>(&self, band: &[T], n: usize) -> Vec<T> {
        debug_assert_eq!(band.len(), n * n);
        if *self == Self::identity() {
            return band.to_vec();
        }
        let mut out = vec![T::default(); n * n];
        for r in 0..n {
            for c in 0..n {
                let (rr, cc) = self.map(r, c, n);
                out[rr * n + cc] = band[r * n + c];
            }
        }
        out
    }

    pub fn apply<T: Real>(&self, t: &Tensor<T>) -> Tensor<T> {
        assert_eq!(t.height, t.width, "augmentation needs square patches");
        let n = t.height;
        let data = (0..t.channels)
            .flat_map(|c| self.apply_band(t.band(c), n))
            .collect();
        Tensor {
            channels: t.channels,
            height: n,
            width: n,
            data,
        }
    }
}
