use rand::{Rng, RngCore};

use crate::error::Result;
use crate::nn::{Discriminator, Mode, Parameterized, Real, Tensor};

/// Widths of the discriminator conv stack.
pub const DISC_WIDTHS: [usize; 3] = [64, 32, 16];

/// Least-squares critic update for one real/fake pair: value of
/// `(D(real) - 1)^2 + D(fake)^2` and its parameter gradient times `scale`.
pub fn critic_patch<T: Real>(
    d: &Discriminator<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    scale: f64,
    rng: &mut dyn RngCore,
) -> Result<(f64, Vec<Vec<T>>)> {
    let mut grads = d.zero_grads();
    let cr = d.forward(real, Mode::Train(&mut *rng))?;
    let cf = d.forward(fake, Mode::Train(&mut *rng))?;
    let (sr, sf) = (cr.score().f64(), cf.score().f64());
    d.backward(&cr, T::of(2.0 * (sr - 1.0) * scale), &mut grads, false)?;
    d.backward(&cf, T::of(2.0 * sf * scale), &mut grads, false)?;
    Ok(((sr - 1.0).powi(2) + sf * sf, grads))
}

/// Value of `(D(input) - target)^2` and the gradient with respect to `input`
/// times `scale`; the critic's own parameters are left alone.
pub fn fool_critic<T: Real>(
    d: &Discriminator<T>,
    input: &Tensor<T>,
    target: f64,
    scale: f64,
    rng: &mut dyn RngCore,
) -> Result<(f64, Tensor<T>)> {
    let c = d.forward(input, Mode::Train(rng))?;
    let s = c.score().f64();
    let mut scratch = d.zero_grads();
    let g = d
        .backward(&c, T::of(2.0 * (s - target) * scale), &mut scratch, true)?
        .expect("input gradient requested");
    Ok(((s - target).powi(2), g))
}

/// Pair of image-space critics used by the output-discriminator ablation:
/// `x` judges translations into the X domain, `y` into the Y domain.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputCritics<T> {
    pub x: Discriminator<T>,
    pub y: Discriminator<T>,
}

impl<T: Real> OutputCritics<T> {
    pub fn new<R: Rng + ?Sized>(cx: usize, cy: usize, dropout: f64, rng: &mut R) -> Self {
        Self {
            x: Discriminator::glorot(cx, &DISC_WIDTHS, dropout, rng),
            y: Discriminator::glorot(cy, &DISC_WIDTHS, dropout, rng),
        }
    }
}

impl<T: Real> Parameterized<T> for OutputCritics<T> {
    fn blocks(&self) -> Vec<&[T]> {
        let mut b = self.x.blocks();
        b.extend(self.y.blocks());
        b
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut b = self.x.blocks_mut();
        b.extend(self.y.blocks_mut());
        b
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut m = self.x.decay_mask();
        m.extend(self.y.decay_mask());
        m
    }
}
