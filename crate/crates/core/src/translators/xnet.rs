use rand::{Rng, RngCore};

use super::critic::{fool_critic, OutputCritics};
use super::Sample;
use crate::error::{Error, Result};
use crate::losses::{weighted_l2_grad, LossTerms, LossWeights};
use crate::nn::{Activation, ConvNet, Mode, Parameterized, Real, Tensor};

/// Hidden widths of both translators.
pub const XNET_HIDDEN: [usize; 3] = [100, 50, 20];

/// Two translators: `f` maps X to Y, `g` maps Y to X.
#[derive(Clone, Debug, PartialEq)]
pub struct XNet<T> {
    pub f: ConvNet<T>,
    pub g: ConvNet<T>,
}

impl<T: Real> XNet<T> {
    pub fn new<R: Rng + ?Sized>(
        cx: usize,
        cy: usize,
        hidden: &[usize],
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let widths = |out: usize| hidden.iter().copied().chain([out]).collect::<Vec<_>>();
        Self {
            f: ConvNet::glorot(cx, &widths(cy), Activation::Tanh, dropout, rng),
            g: ConvNet::glorot(cy, &widths(cx), Activation::Tanh, dropout, rng),
        }
    }

    pub fn x_channels(&self) -> usize {
        self.f.in_channels()
    }

    pub fn y_channels(&self) -> usize {
        self.g.in_channels()
    }

    pub fn hidden(&self) -> Vec<usize> {
        let l = &self.f.layers;
        l[..l.len() - 1].iter().map(|c| c.out_channels).collect()
    }

    pub fn set_dropout(&mut self, rate: f64) {
        self.f.dropout = rate;
        self.g.dropout = rate;
    }

    /// `(x_hat, y_hat, x_cycled, y_cycled)` with dropout disabled.
    pub fn translate(
        &self,
        x: &Tensor<T>,
        y: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>)> {
        if x.channels != self.x_channels() || y.channels != self.y_channels() {
            return Err(Error::shape(format!(
                "model expects {}/{} channels, got {}/{}",
                self.x_channels(),
                self.y_channels(),
                x.channels,
                y.channels
            )));
        }
        let y_hat = self.f.infer(x)?;
        let x_hat = self.g.infer(y)?;
        let x_dot = self.g.infer(&y_hat)?;
        let y_dot = self.f.infer(&x_hat)?;
        Ok((x_hat, y_hat, x_dot, y_dot))
    }

    /// Loss terms of one training patch and the gradient of
    /// `scale * (w_cyc L_cyc + w_alpha L_alpha [+ w_adv L_adv])` with respect
    /// to the parameters (`f` blocks then `g` blocks). Weight decay is left
    /// to the caller. Returned terms are unscaled per-patch values.
    pub fn patch_grads(
        &self,
        s: &Sample<T>,
        w: &LossWeights,
        scale: f64,
        critics: Option<&OutputCritics<T>>,
        rng: &mut dyn RngCore,
    ) -> Result<(LossTerms, Vec<Vec<T>>)> {
        let mut terms = LossTerms::default();
        let mut grads = self.zero_grads();
        let (gf, gg) = grads.split_at_mut(2 * self.f.layers.len());
        let cf = self.f.forward(&s.x, Mode::Train(&mut *rng))?;
        let cg = self.g.forward(&s.y, Mode::Train(&mut *rng))?;
        let (y_hat, x_hat) = (cf.output(), cg.output());
        let pi = Some(s.pi.as_slice());
        let (tx, mut g_xhat) = weighted_l2_grad(x_hat, &s.x, pi, scale * w.alpha)?;
        let (ty, mut g_yhat) = weighted_l2_grad(y_hat, &s.y, pi, scale * w.alpha)?;
        terms.translation = tx + ty;

        if w.cyc > 0.0 {
            let cgc = self.g.forward(y_hat, Mode::Train(&mut *rng))?;
            let cfc = self.f.forward(x_hat, Mode::Train(&mut *rng))?;
            let (cx, gxd) = weighted_l2_grad(cgc.output(), &s.x, None, scale * w.cyc)?;
            let (cy, gyd) = weighted_l2_grad(cfc.output(), &s.y, None, scale * w.cyc)?;
            terms.cycle = cx + cy;
            let gi = self.g.backward(&cgc, &gxd, gg, true)?.expect("input gradient");
            g_yhat.add_scaled(&gi, T::one());
            let gi = self.f.backward(&cfc, &gyd, gf, true)?.expect("input gradient");
            g_xhat.add_scaled(&gi, T::one());
        }

        if let Some(c) = critics.filter(|_| w.adv > 0.0) {
            let (ax, gx) = fool_critic(&c.x, x_hat, 1.0, scale * w.adv, rng)?;
            let (ay, gy) = fool_critic(&c.y, y_hat, 1.0, scale * w.adv, rng)?;
            terms.out_adv = ax + ay;
            g_xhat.add_scaled(&gx, T::one());
            g_yhat.add_scaled(&gy, T::one());
        }

        self.f.backward(&cf, &g_yhat, gf, false)?;
        self.g.backward(&cg, &g_xhat, gg, false)?;
        Ok((terms, grads))
    }
}

impl<T: Real> Parameterized<T> for XNet<T> {
    fn blocks(&self) -> Vec<&[T]> {
        let mut b = self.f.blocks();
        b.extend(self.g.blocks());
        b
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut b = self.f.blocks_mut();
        b.extend(self.g.blocks_mut());
        b
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut m = self.f.decay_mask();
        m.extend(self.g.decay_mask());
        m
    }
}
