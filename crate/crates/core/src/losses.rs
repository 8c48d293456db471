//! Training objectives and their gradients.
//!
//! Per-patch functions return the loss value (accumulated in `f64`) together
//! with the gradient with respect to the *first* argument; the gradient with
//! respect to the second is its negation. Batch expectations are plain means
//! over patches, so callers scale gradients by `1 / batch`.

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

/// Weights of the individual loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub adv: f64,
    pub ae: f64,
    pub cyc: f64,
    pub alpha: f64,
    pub theta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adv: 1.0,
            ae: 0.2,
            cyc: 2.0,
            alpha: 3.0,
            theta: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.adv, self.ae, self.cyc, self.alpha, self.theta];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Per-pixel weight from the change prior. The default choice is `1 - alpha`;
/// any monotonically decreasing map into `[0, 1]` may be supplied.
pub fn pixel_weights(alpha: &[f64], map: impl Fn(f64) -> f64) -> Vec<f64> {
    alpha.iter().map(|&a| map(a).clamp(0.0, 1.0)).collect()
}

pub fn complement(alpha: f64) -> f64 {
    1.0 - alpha
}

fn check_pair<T: Real>(a: &Tensor<T>, b: &Tensor<T>, w: Option<&[T]>) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "patches {}x{}x{} and {}x{}x{} differ",
            a.channels, a.height, a.width, b.channels, b.height, b.width
        )));
    }
    if let Some(w) = w {
        if w.len() != a.pixels() {
            return Err(Error::shape(format!(
                "{} pixel weights for a {}x{} patch",
                w.len(),
                a.height,
                a.width
            )));
        }
    }
    Ok(())
}

/// `(1 / hw) * sum_i W_i ||a_i - b_i||^2`; `None` means unit weights.
pub fn weighted_l2<T: Real>(a: &Tensor<T>, b: &Tensor<T>, w: Option<&[T]>) -> Result<f64> {
    check_pair(a, b, w)?;
    let n = a.pixels();
    let mut sum = 0.0f64;
    for c in 0..a.channels {
        let (ab, bb) = (a.band(c), b.band(c));
        for i in 0..n {
            let d = (ab[i] - bb[i]).f64();
            let wi = w.map_or(1.0, |w| w[i].f64());
            sum += wi * d * d;
        }
    }
    Ok(sum / n as f64)
}

/// Value of [`weighted_l2`] and its gradient with respect to `a`, scaled by
/// `scale`.
pub fn weighted_l2_grad<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    w: Option<&[T]>,
    scale: f64,
) -> Result<(f64, Tensor<T>)> {
    let value = weighted_l2(a, b, w)?;
    let n = a.pixels();
    let k = 2.0 * scale / n as f64;
    let mut grad = Tensor::zeros(a.channels, a.height, a.width);
    for c in 0..a.channels {
        let off = c * n;
        for i in 0..n {
            let wi = w.map_or(1.0, |w| w[i].f64());
            let d = (a.data[off + i] - b.data[off + i]).f64();
            grad.data[off + i] = T::of(k * wi * d);
        }
    }
    Ok((value, grad))
}

/// Prior-weighted translation loss `d(x_hat, x | P) + d(y_hat, y | P)`.
pub fn translation_loss<T: Real>(
    x: &Tensor<T>,
    x_hat: &Tensor<T>,
    y: &Tensor<T>,
    y_hat: &Tensor<T>,
    weights: &[T],
) -> Result<f64> {
    Ok(weighted_l2(x_hat, x, Some(weights))? + weighted_l2(y_hat, y, Some(weights))?)
}

/// Cycle-consistency loss `d(x_dot, x) + d(y_dot, y)`.
pub fn cycle_loss<T: Real>(
    x: &Tensor<T>,
    x_dot: &Tensor<T>,
    y: &Tensor<T>,
    y_dot: &Tensor<T>,
) -> Result<f64> {
    Ok(weighted_l2(x_dot, x, None)? + weighted_l2(y_dot, y, None)?)
}

/// Autoencoder reconstruction loss `d(x_tilde, x) + d(y_tilde, y)`.
pub fn reconstruction_loss<T: Real>(
    x: &Tensor<T>,
    x_tilde: &Tensor<T>,
    y: &Tensor<T>,
    y_tilde: &Tensor<T>,
) -> Result<f64> {
    cycle_loss(x, x_tilde, y, y_tilde)
}

/// Least-squares adversarial losses and their gradients with respect to the
/// discriminator outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Adversarial {
    /// Discriminator objective: X codes labelled 1, Y codes labelled 0.
    pub disc: f64,
    /// Encoder objective with the labels swapped.
    pub code: f64,
    pub disc_grad_x: Vec<f64>,
    pub disc_grad_y: Vec<f64>,
    pub code_grad_x: Vec<f64>,
    pub code_grad_y: Vec<f64>,
}

pub fn adversarial_losses(dx: &[f64], dy: &[f64]) -> Result<Adversarial> {
    if dx.is_empty() || dy.is_empty() {
        return Err(Error::shape("adversarial losses need at least one output per side"));
    }
    let (nx, ny) = (dx.len() as f64, dy.len() as f64);
    let mean = |v: &[f64], t: f64| v.iter().map(|d| (d - t) * (d - t)).sum::<f64>() / v.len() as f64;
    let grad = |v: &[f64], t: f64, n: f64| v.iter().map(|d| 2.0 * (d - t) / n).collect();
    Ok(Adversarial {
        disc: mean(dx, 1.0) + mean(dy, 0.0),
        code: mean(dx, 0.0) + mean(dy, 1.0),
        disc_grad_x: grad(dx, 1.0, nx),
        disc_grad_y: grad(dy, 0.0, ny),
        code_grad_x: grad(dx, 0.0, nx),
        code_grad_y: grad(dy, 1.0, ny),
    })
}

/// Batch-mean values of every loss term. Unused terms stay zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub disc: f64,
    pub code: f64,
    pub recon: f64,
    pub cycle: f64,
    pub translation: f64,
    /// Squared norm of the decayed parameters.
    pub decay: f64,
    /// Image-space critic objective (output-discriminator ablation only).
    pub out_disc: f64,
    /// Translator objective against the image-space critics.
    pub out_adv: f64,
}

impl LossTerms {
    pub fn total_xnet(&self, w: &LossWeights) -> f64 {
        w.cyc * self.cycle
            + w.alpha * self.translation
            + w.theta * self.decay
            + w.adv * (self.out_adv + self.out_disc)
    }

    pub fn total_acenet(&self, w: &LossWeights) -> f64 {
        w.adv * (self.code + self.disc)
            + w.ae * self.recon
            + w.cyc * self.cycle
            + w.alpha * self.translation
            + w.theta * self.decay
            + w.adv * (self.out_adv + self.out_disc)
    }

    /// Elementwise `self += other * k`.
    pub fn accumulate(&mut self, other: &LossTerms, k: f64) {
        self.disc += k * other.disc;
        self.code += k * other.code;
        self.recon += k * other.recon;
        self.cycle += k * other.cycle;
        self.translation += k * other.translation;
        self.decay += k * other.decay;
        self.out_disc += k * other.out_disc;
        self.out_adv += k * other.out_adv;
    }
}
