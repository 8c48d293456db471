use rand::{Rng, RngCore};

use super::critic::{fool_critic, OutputCritics, DISC_WIDTHS};
use super::Sample;
use crate::error::{Error, Result};
use crate::losses::{weighted_l2_grad, LossTerms, LossWeights};
use crate::nn::{Activation, ConvNet, Discriminator, Mode, Parameterized, Real, Tensor};

/// Encoder widths; the last one is the number of code channels.
pub const ENCODER_WIDTHS: [usize; 3] = [100, 50, 20];
/// Decoder hidden widths, followed by an output layer matching the data.
pub const DECODER_HIDDEN: [usize; 3] = [20, 50, 100];

/// Layer widths of an ACE-Net.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AceWidths {
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    pub disc: Vec<usize>,
}

impl Default for AceWidths {
    fn default() -> Self {
        Self {
            encoder: ENCODER_WIDTHS.to_vec(),
            decoder: DECODER_HIDDEN.to_vec(),
            disc: DISC_WIDTHS.to_vec(),
        }
    }
}

/// The two autoencoders sharing a code space.
#[derive(Clone, Debug, PartialEq)]
pub struct Coders<T> {
    pub enc_x: ConvNet<T>,
    pub enc_y: ConvNet<T>,
    pub dec_x: ConvNet<T>,
    pub dec_y: ConvNet<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AceNet<T> {
    pub coders: Coders<T>,
    /// Judges whether a code came from X (label 1) or Y (label 0).
    pub disc: Discriminator<T>,
}

/// Everything an ACE-Net produces for a pair of images.
pub struct AceOutputs<T> {
    pub x_hat: Tensor<T>,
    pub y_hat: Tensor<T>,
    pub x_dot: Tensor<T>,
    pub y_dot: Tensor<T>,
    pub x_tilde: Tensor<T>,
    pub y_tilde: Tensor<T>,
}

impl<T: Real> AceNet<T> {
    pub fn new<R: Rng + ?Sized>(
        cx: usize,
        cy: usize,
        widths: &AceWidths,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let code = *widths.encoder.last().expect("encoder needs layers");
        let dec = |out: usize| widths.decoder.iter().copied().chain([out]).collect::<Vec<_>>();
        let coders = Coders {
            enc_x: ConvNet::glorot(cx, &widths.encoder, Activation::Tanh, dropout, rng),
            enc_y: ConvNet::glorot(cy, &widths.encoder, Activation::Tanh, dropout, rng),
            dec_x: ConvNet::glorot(code, &dec(cx), Activation::Tanh, dropout, rng),
            dec_y: ConvNet::glorot(code, &dec(cy), Activation::Tanh, dropout, rng),
        };
        let disc = Discriminator::glorot(code, &widths.disc, dropout, rng);
        Self { coders, disc }
    }

    pub fn x_channels(&self) -> usize {
        self.coders.enc_x.in_channels()
    }

    pub fn y_channels(&self) -> usize {
        self.coders.enc_y.in_channels()
    }

    pub fn widths(&self) -> AceWidths {
        let outs = |n: &ConvNet<T>| n.layers.iter().map(|l| l.out_channels).collect::<Vec<_>>();
        let mut decoder = outs(&self.coders.dec_x);
        decoder.pop();
        AceWidths {
            encoder: outs(&self.coders.enc_x),
            decoder,
            disc: outs(&self.disc.convs),
        }
    }

    pub fn set_dropout(&mut self, rate: f64) {
        let c = &mut self.coders;
        for n in [&mut c.enc_x, &mut c.enc_y, &mut c.dec_x, &mut c.dec_y] {
            n.dropout = rate;
        }
        self.disc.convs.dropout = rate;
    }

    pub fn translate(&self, x: &Tensor<T>, y: &Tensor<T>) -> Result<AceOutputs<T>> {
        if x.channels != self.x_channels() || y.channels != self.y_channels() {
            return Err(Error::shape(format!(
                "model expects {}/{} channels, got {}/{}",
                self.x_channels(),
                self.y_channels(),
                x.channels,
                y.channels
            )));
        }
        let c = &self.coders;
        let zx = c.enc_x.infer(x)?;
        let zy = c.enc_y.infer(y)?;
        let y_hat = c.dec_y.infer(&zx)?;
        let x_hat = c.dec_x.infer(&zy)?;
        let x_tilde = c.dec_x.infer(&zx)?;
        let y_tilde = c.dec_y.infer(&zy)?;
        let x_dot = c.dec_x.infer(&c.enc_y.infer(&y_hat)?)?;
        let y_dot = c.dec_y.infer(&c.enc_x.infer(&x_hat)?)?;
        Ok(AceOutputs {
            x_hat,
            y_hat,
            x_dot,
            y_dot,
            x_tilde,
            y_tilde,
        })
    }

    /// Codes of a pair without dropout.
    pub fn codes(&self, x: &Tensor<T>, y: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        Ok((self.coders.enc_x.infer(x)?, self.coders.enc_y.infer(y)?))
    }

    /// Loss terms of one training patch and the gradient, with respect to the
    /// coder parameters, of `scale * (w_adv L_Z + w_AE L_AE + w_cyc L_cyc +
    /// w_alpha L_alpha [+ w_adv L_out])`. The code discriminator is treated
    /// as a constant. Weight decay is left to the caller.
    pub fn patch_grads(
        &self,
        s: &Sample<T>,
        w: &LossWeights,
        scale: f64,
        critics: Option<&OutputCritics<T>>,
        rng: &mut dyn RngCore,
    ) -> Result<(LossTerms, Vec<Vec<T>>)> {
        let c = &self.coders;
        let mut terms = LossTerms::default();
        let mut grads = c.zero_grads();
        let (g_ex, rest) = grads.split_at_mut(2 * c.enc_x.layers.len());
        let (g_ey, rest) = rest.split_at_mut(2 * c.enc_y.layers.len());
        let (g_dx, g_dy) = rest.split_at_mut(2 * c.dec_x.layers.len());

        let czx = c.enc_x.forward(&s.x, Mode::Train(&mut *rng))?;
        let czy = c.enc_y.forward(&s.y, Mode::Train(&mut *rng))?;
        let (zx, zy) = (czx.output(), czy.output());
        let mut g_zx = Tensor::zeros(zx.channels, zx.height, zx.width);
        let mut g_zy = g_zx.clone();

        let cyh = c.dec_y.forward(zx, Mode::Train(&mut *rng))?;
        let cxh = c.dec_x.forward(zy, Mode::Train(&mut *rng))?;
        let (y_hat, x_hat) = (cyh.output(), cxh.output());
        let pi = Some(s.pi.as_slice());
        let (tx, mut g_xhat) = weighted_l2_grad(x_hat, &s.x, pi, scale * w.alpha)?;
        let (ty, mut g_yhat) = weighted_l2_grad(y_hat, &s.y, pi, scale * w.alpha)?;
        terms.translation = tx + ty;

        if w.ae > 0.0 {
            let cxt = c.dec_x.forward(zx, Mode::Train(&mut *rng))?;
            let cyt = c.dec_y.forward(zy, Mode::Train(&mut *rng))?;
            let (rx, gx) = weighted_l2_grad(cxt.output(), &s.x, None, scale * w.ae)?;
            let (ry, gy) = weighted_l2_grad(cyt.output(), &s.y, None, scale * w.ae)?;
            terms.recon = rx + ry;
            g_zx.add_scaled(&c.dec_x.backward(&cxt, &gx, g_dx, true)?.expect("input"), T::one());
            g_zy.add_scaled(&c.dec_y.backward(&cyt, &gy, g_dy, true)?.expect("input"), T::one());
        }

        if w.cyc > 0.0 {
            // x -> y_hat -> code -> x_dot and y -> x_hat -> code -> y_dot
            let cz1 = c.enc_y.forward(y_hat, Mode::Train(&mut *rng))?;
            let cxd = c.dec_x.forward(cz1.output(), Mode::Train(&mut *rng))?;
            let cz2 = c.enc_x.forward(x_hat, Mode::Train(&mut *rng))?;
            let cyd = c.dec_y.forward(cz2.output(), Mode::Train(&mut *rng))?;
            let (cx, gxd) = weighted_l2_grad(cxd.output(), &s.x, None, scale * w.cyc)?;
            let (cy, gyd) = weighted_l2_grad(cyd.output(), &s.y, None, scale * w.cyc)?;
            terms.cycle = cx + cy;
            let gz1 = c.dec_x.backward(&cxd, &gxd, g_dx, true)?.expect("input");
            let gi = c.enc_y.backward(&cz1, &gz1, g_ey, true)?.expect("input");
            g_yhat.add_scaled(&gi, T::one());
            let gz2 = c.dec_y.backward(&cyd, &gyd, g_dy, true)?.expect("input");
            let gi = c.enc_x.backward(&cz2, &gz2, g_ex, true)?.expect("input");
            g_xhat.add_scaled(&gi, T::one());
        }

        if w.adv > 0.0 {
            // Encoders try to make X codes look like Y codes and vice versa.
            let (ax, gx) = fool_critic(&self.disc, zx, 0.0, scale * w.adv, rng)?;
            let (ay, gy) = fool_critic(&self.disc, zy, 1.0, scale * w.adv, rng)?;
            terms.code = ax + ay;
            g_zx.add_scaled(&gx, T::one());
            g_zy.add_scaled(&gy, T::one());
            if let Some(cr) = critics {
                let (ox, gx) = fool_critic(&cr.x, x_hat, 1.0, scale * w.adv, rng)?;
                let (oy, gy) = fool_critic(&cr.y, y_hat, 1.0, scale * w.adv, rng)?;
                terms.out_adv = ox + oy;
                g_xhat.add_scaled(&gx, T::one());
                g_yhat.add_scaled(&gy, T::one());
            }
        }

        g_zx.add_scaled(&c.dec_y.backward(&cyh, &g_yhat, g_dy, true)?.expect("input"), T::one());
        g_zy.add_scaled(&c.dec_x.backward(&cxh, &g_xhat, g_dx, true)?.expect("input"), T::one());
        c.enc_x.backward(&czx, &g_zx, g_ex, false)?;
        c.enc_y.backward(&czy, &g_zy, g_ey, false)?;
        Ok((terms, grads))
    }
}

impl<T: Real> Parameterized<T> for Coders<T> {
    fn blocks(&self) -> Vec<&[T]> {
        [&self.enc_x, &self.enc_y, &self.dec_x, &self.dec_y]
            .into_iter()
            .flat_map(|n| n.blocks())
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        [
            &mut self.enc_x,
            &mut self.enc_y,
            &mut self.dec_x,
            &mut self.dec_y,
        ]
        .into_iter()
        .flat_map(|n| n.blocks_mut())
        .collect()
    }

    fn decay_mask(&self) -> Vec<bool> {
        [&self.enc_x, &self.enc_y, &self.dec_x, &self.dec_y]
            .into_iter()
            .flat_map(|n| n.decay_mask())
            .collect()
    }
}

impl<T: Real> Parameterized<T> for AceNet<T> {
    fn blocks(&self) -> Vec<&[T]> {
        let mut b = self.coders.blocks();
        b.extend(self.disc.blocks());
        b
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut b = self.coders.blocks_mut();
        b.extend(self.disc.blocks_mut());
        b
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut m = self.coders.decay_mask();
        m.extend(self.disc.decay_mask());
        m
    }
}
