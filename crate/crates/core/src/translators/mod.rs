//! Image-to-image translation networks and their training.

mod acenet;
mod augment;
mod checkpoint;
mod critic;
mod xnet;

pub use acenet::{AceNet, AceOutputs, AceWidths, Coders, DECODER_HIDDEN, ENCODER_WIDTHS};
pub use augment::Transform;
pub use checkpoint::{decode_model, encode_model, load_model, save_model};
pub use critic::{critic_patch, fool_critic, OutputCritics, DISC_WIDTHS};
pub use xnet::{XNet, XNET_HIDDEN};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::affinity::PriorMap;
use crate::change::DifferenceImage;
use crate::error::{Error, Result};
use crate::losses::{complement, pixel_weights, LossTerms, LossWeights};
use crate::nn::{Adam, AdamConfig, Parameterized, Real, Tensor};
use crate::raster::{NormalizedRaster, Raster};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    XNet,
    AceNet,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::XNet => "xnet",
            Arch::AceNet => "acenet",
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xnet" => Ok(Arch::XNet),
            "acenet" => Ok(Arch::AceNet),
            other => Err(Error::config(format!("unknown architecture `{other}`"))),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Training configuration variants used for ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Proposed,
    /// Two extra critics on the image spaces.
    DiscrOutput,
    /// Uniform random prior instead of the affinity prior.
    NoAlpha,
    NoCycle,
    NoMilestones,
    /// No code discriminator (ACE-Net only).
    NoDiscr,
    /// No reconstruction loss (ACE-Net only).
    NoRecon,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Proposed,
        Variant::DiscrOutput,
        Variant::NoAlpha,
        Variant::NoCycle,
        Variant::NoMilestones,
        Variant::NoDiscr,
        Variant::NoRecon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::DiscrOutput => "discr_output",
            Variant::NoAlpha => "no_alpha",
            Variant::NoCycle => "no_cycle",
            Variant::NoMilestones => "no_milestones",
            Variant::NoDiscr => "no_discr",
            Variant::NoRecon => "no_recon",
        }
    }

    pub fn check(self, arch: Arch) -> Result<()> {
        if arch == Arch::XNet && matches!(self, Variant::NoDiscr | Variant::NoRecon) {
            return Err(Error::config(format!(
                "variant `{}` only applies to acenet",
                self.name()
            )));
        }
        Ok(())
    }

    /// Loss weights after removing the terms this variant drops.
    pub fn weights(self, base: &LossWeights) -> LossWeights {
        let mut w = *base;
        match self {
            Variant::NoCycle => w.cyc = 0.0,
            Variant::NoDiscr => w.adv = 0.0,
            Variant::NoRecon => w.ae = 0.0,
            _ => {}
        }
        w
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown variant `{s}`")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    /// Side of the square training patches; capped by the image size.
    pub patch_hw: usize,
    pub lr: f64,
    /// Epochs after which the prior is replaced by the current difference
    /// image.
    pub milestones: Vec<usize>,
    pub seed: u64,
    pub augmentation: bool,
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 240,
            batches_per_epoch: 10,
            batch_size: 10,
            patch_hw: 100,
            lr: 1e-5,
            milestones: vec![80, 160],
            seed: 0,
            augmentation: true,
            dropout: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batches_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs, batches and batch size must be positive"));
        }
        if self.patch_hw == 0 {
            return Err(Error::config("patch size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if let Some(m) = self.milestones.iter().find(|&&m| m == 0 || m > self.epochs) {
            return Err(Error::config(format!(
                "milestone {m} outside 1..={}",
                self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Independent random streams, so that e.g. toggling augmentation does not
/// change the initial weights.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Init = 0,
    Sampling = 1,
    Dropout = 2,
    Augmentation = 3,
    Prior = 4,
    Critics = 5,
}

pub fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

/// One aligned training triple.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub x: Tensor<T>,
    pub y: Tensor<T>,
    /// Per-pixel loss weights.
    pub pi: Vec<T>,
}

impl<T: Real> Sample<T> {
    pub fn transformed(&self, t: &Transform) -> Self {
        Self {
            x: t.apply(&self.x),
            y: t.apply(&self.y),
            pi: t.apply_band(&self.pi, self.x.height),
        }
    }
}

/// A trained translator.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    XNet(XNet<f32>),
    AceNet(AceNet<f32>),
}

/// Full-image outputs of a model.
#[derive(Clone, Debug)]
pub struct Translations {
    pub x_hat: Raster,
    pub y_hat: Raster,
    pub x_cycled: Raster,
    pub y_cycled: Raster,
    /// Autoencoder reconstructions (ACE-Net only).
    pub x_recon: Option<Raster>,
    pub y_recon: Option<Raster>,
}

impl Model {
    pub fn new(arch: Arch, cx: usize, cy: usize, dropout: f64, seed: u64) -> Self {
        let mut rng = stream(seed, Stream::Init);
        match arch {
            Arch::XNet => Model::XNet(XNet::new(cx, cy, &XNET_HIDDEN, dropout, &mut rng)),
            Arch::AceNet => {
                Model::AceNet(AceNet::new(cx, cy, &AceWidths::default(), dropout, &mut rng))
            }
        }
    }

    pub fn arch(&self) -> Arch {
        match self {
            Model::XNet(_) => Arch::XNet,
            Model::AceNet(_) => Arch::AceNet,
        }
    }

    pub fn channels(&self) -> (usize, usize) {
        match self {
            Model::XNet(m) => (m.x_channels(), m.y_channels()),
            Model::AceNet(m) => (m.x_channels(), m.y_channels()),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Model::XNet(m) => m.parameter_count(),
            Model::AceNet(m) => m.parameter_count(),
        }
    }

    fn translate_tensors(&self, x: &Tensor<f32>, y: &Tensor<f32>) -> Result<[Tensor<f32>; 6]> {
        match self {
            Model::XNet(m) => {
                let (xh, yh, xd, yd) = m.translate(x, y)?;
                Ok([xh, yh, xd, yd, Tensor::zeros(0, 0, 0), Tensor::zeros(0, 0, 0)])
            }
            Model::AceNet(m) => {
                let o = m.translate(x, y)?;
                Ok([o.x_hat, o.y_hat, o.x_dot, o.y_dot, o.x_tilde, o.y_tilde])
            }
        }
    }

    /// Runs the trained networks on whole images, dropout disabled.
    pub fn translate(&self, x: &Raster, y: &Raster) -> Result<Translations> {
        if !x.same_grid(y) {
            return Err(Error::shape("x and y are not on the same grid"));
        }
        let [xh, yh, xd, yd, xr, yr] =
            self.translate_tensors(&Tensor::from_raster(x), &Tensor::from_raster(y))?;
        let recon = |t: Tensor<f32>| (t.channels > 0).then(|| t.to_raster());
        Ok(Translations {
            x_hat: xh.to_raster(),
            y_hat: yh.to_raster(),
            x_cycled: xd.to_raster(),
            y_cycled: yd.to_raster(),
            x_recon: recon(xr),
            y_recon: recon(yr),
        })
    }

    /// Difference image of the full scene.
    pub fn difference(&self, x: &Raster, y: &Raster) -> Result<DifferenceImage> {
        let t = self.translate(x, y)?;
        DifferenceImage::from_translations(x, &t.x_hat, y, &t.y_hat)
    }
}

/// Mean loss terms of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLosses {
    pub epoch: usize,
    pub terms: LossTerms,
    pub total: f64,
}

pub const HISTORY_HEADER: &str =
    "epoch,disc,code,recon,cycle,translation,decay,out_disc,out_adv,total";

pub fn history_csv(history: &[EpochLosses]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for e in history {
        let t = &e.terms;
        s.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            e.epoch,
            t.disc,
            t.code,
            t.recon,
            t.cycle,
            t.translation,
            t.decay,
            t.out_disc,
            t.out_adv,
            e.total
        ));
    }
    s
}

/// Result of a full training run.
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochLosses>,
    /// Loss weights of the prior at the end of training.
    pub final_weights: Vec<f32>,
}

/// Stateful training loop. Each batch takes one critic step (when the
/// variant has critics) followed by one translator step.
pub struct Trainer {
    model: Model,
    variant: Variant,
    cfg: TrainConfig,
    weights: LossWeights,
    gen_opt: Adam,
    disc_opt: Adam,
    critics: Option<(OutputCritics<f32>, Adam)>,
    x: Tensor<f32>,
    y: Tensor<f32>,
    pi: Vec<f32>,
    patch: usize,
    sampling: ChaCha8Rng,
    dropout: ChaCha8Rng,
    augment: ChaCha8Rng,
    history: Vec<EpochLosses>,
}

impl Trainer {
    pub fn new(
        arch: Arch,
        variant: Variant,
        x: &NormalizedRaster,
        y: &NormalizedRaster,
        prior: &PriorMap,
        cfg: &TrainConfig,
        weights: &LossWeights,
    ) -> Result<Self> {
        variant.check(arch)?;
        cfg.validate()?;
        weights.validate()?;
        let (xr, yr) = (x.raster(), y.raster());
        if !xr.same_grid(yr) {
            return Err(Error::shape("x and y are not on the same grid"));
        }
        if prior.height() != xr.height() || prior.width() != xr.width() {
            return Err(Error::shape("prior does not match the images"));
        }
        let model = Model::new(arch, xr.channels(), yr.channels(), cfg.dropout, cfg.seed);
        let mut init = stream(cfg.seed, Stream::Critics);
        let critics = (variant == Variant::DiscrOutput).then(|| {
            let c = OutputCritics::new(xr.channels(), yr.channels(), cfg.dropout, &mut init);
            (c, Adam::new(adam_config(cfg.lr)))
        });
        let pi = if variant == Variant::NoAlpha {
            let mut rng = stream(cfg.seed, Stream::Prior);
            (0..prior.alpha().len())
                .map(|_| complement(rng.random::<f64>()) as f32)
                .collect()
        } else {
            pixel_weights(prior.alpha(), complement)
                .into_iter()
                .map(|v| v as f32)
                .collect()
        };
        let patch = cfg.patch_hw.min(xr.height()).min(xr.width());
        let mut cfg = cfg.clone();
        if variant == Variant::NoMilestones {
            cfg.milestones.clear();
        }
        Ok(Self {
            model,
            variant,
            weights: variant.weights(weights),
            gen_opt: Adam::new(adam_config(cfg.lr)),
            disc_opt: Adam::new(adam_config(cfg.lr)),
            critics,
            x: Tensor::from_raster(xr),
            y: Tensor::from_raster(yr),
            pi,
            patch,
            sampling: stream(cfg.seed, Stream::Sampling),
            dropout: stream(cfg.seed, Stream::Dropout),
            augment: stream(cfg.seed, Stream::Augmentation),
            history: Vec::new(),
            cfg,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn prior_weights(&self) -> &[f32] {
        &self.pi
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn history(&self) -> &[EpochLosses] {
        &self.history
    }

    /// Draws `batch_size` aligned patches at uniform random positions, each
    /// with its own random symmetry when augmentation is on.
    pub fn sample_batch(&mut self) -> Vec<Sample<f32>> {
        let p = self.patch;
        let (h, w) = (self.x.height, self.x.width);
        (0..self.cfg.batch_size)
            .map(|_| {
                let r = self.sampling.random_range(0..=h - p);
                let c = self.sampling.random_range(0..=w - p);
                let pi = (r..r + p)
                    .flat_map(|row| self.pi[row * w + c..row * w + c + p].iter().copied())
                    .collect();
                let s = Sample {
                    x: self.x.crop(r, c, p, p),
                    y: self.y.crop(r, c, p, p),
                    pi,
                };
                if self.cfg.augmentation {
                    s.transformed(&Transform::random(&mut self.augment))
                } else {
                    s
                }
            })
            .collect()
    }

    fn patch_seeds(&mut self, n: usize) -> Vec<u64> {
        (0..n).map(|_| self.dropout.next_u64()).collect()
    }

    /// One update of every critic in play. Returns `(code critic loss,
    /// image critic loss)`, both batch means.
    pub fn discriminator_step(&mut self, batch: &[Sample<f32>]) -> Result<(f64, f64)> {
        let scale = 1.0 / batch.len() as f64;
        let w = self.weights;
        let mut code_loss = 0.0;
        if w.adv > 0.0 && self.model.arch() == Arch::AceNet {
            let seeds = self.patch_seeds(batch.len());
            if let Model::AceNet(net) = &mut self.model {
                let net_ref = &*net;
                let parts: Vec<Result<(f64, Vec<Vec<f32>>)>> = batch
                    .par_iter()
                    .zip(seeds)
                    .map(|(s, seed)| {
                        let (zx, zy) = net_ref.codes(&s.x, &s.y)?;
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        critic_patch(&net_ref.disc, &zx, &zy, scale * w.adv, &mut rng)
                    })
                    .collect();
                let (loss, mut grads) = reduce(parts, net.disc.zero_grads())?;
                net.disc.add_decay_grad(w.theta, &mut grads);
                self.disc_opt.step(&mut net.disc, &grads)?;
                code_loss = loss * scale;
            }
        }
        let mut out_loss = 0.0;
        if w.adv > 0.0 {
            if let Some((critics, opt)) = self.critics.as_mut() {
                let seeds = (0..batch.len()).map(|_| self.dropout.next_u64()).collect::<Vec<_>>();
                let model = &self.model;
                let crit = &*critics;
                let parts: Vec<Result<(f64, Vec<Vec<f32>>)>> = batch
                    .par_iter()
                    .zip(seeds)
                    .map(|(s, seed)| {
                        let [xh, yh, ..] = model.translate_tensors(&s.x, &s.y)?;
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        let (lx, gx) = critic_patch(&crit.x, &s.x, &xh, scale * w.adv, &mut rng)?;
                        let (ly, gy) = critic_patch(&crit.y, &s.y, &yh, scale * w.adv, &mut rng)?;
                        Ok((lx + ly, gx.into_iter().chain(gy).collect()))
                    })
                    .collect();
                let (loss, mut grads) = reduce(parts, critics.zero_grads())?;
                critics.add_decay_grad(w.theta, &mut grads);
                opt.step(critics, &grads)?;
                out_loss = loss * scale;
            }
        }
        Ok((code_loss, out_loss))
    }

    /// One update of the translator parameters; critics are held fixed.
    /// Returns batch-mean loss terms.
    pub fn generator_step(&mut self, batch: &[Sample<f32>]) -> Result<LossTerms> {
        let scale = 1.0 / batch.len() as f64;
        let w = self.weights;
        let seeds = self.patch_seeds(batch.len());
        let critics = self.critics.as_ref().map(|(c, _)| c);
        let mut terms = LossTerms::default();
        match &mut self.model {
            Model::XNet(net) => {
                let net_ref = &*net;
                let parts: Vec<_> = batch
                    .par_iter()
                    .zip(seeds)
                    .map(|(s, seed)| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        net_ref.patch_grads(s, &w, scale, critics, &mut rng)
                    })
                    .collect();
                let mut grads = net.zero_grads();
                for part in parts {
                    let (t, g) = part?;
                    terms.accumulate(&t, scale);
                    add_blocks(&mut grads, &g);
                }
                net.add_decay_grad(w.theta, &mut grads);
                self.gen_opt.step(net, &grads)?;
            }
            Model::AceNet(net) => {
                let net_ref = &*net;
                let parts: Vec<_> = batch
                    .par_iter()
                    .zip(seeds)
                    .map(|(s, seed)| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        net_ref.patch_grads(s, &w, scale, critics, &mut rng)
                    })
                    .collect();
                let mut grads = net.coders.zero_grads();
                for part in parts {
                    let (t, g) = part?;
                    terms.accumulate(&t, scale);
                    add_blocks(&mut grads, &g);
                }
                net.coders.add_decay_grad(w.theta, &mut grads);
                self.gen_opt.step(&mut net.coders, &grads)?;
            }
        }
        Ok(terms)
    }

    fn decay_norm(&self) -> f64 {
        let model = match &self.model {
            Model::XNet(m) => m.decay_norm_sq(),
            Model::AceNet(m) => m.decay_norm_sq(),
        };
        model + self.critics.as_ref().map_or(0.0, |(c, _)| c.decay_norm_sq())
    }

    pub fn run_epoch(&mut self) -> Result<EpochLosses> {
        let mut mean = LossTerms::default();
        let k = 1.0 / self.cfg.batches_per_epoch as f64;
        for _ in 0..self.cfg.batches_per_epoch {
            let batch = self.sample_batch();
            let (disc, out_disc) = self.discriminator_step(&batch)?;
            let mut terms = self.generator_step(&batch)?;
            terms.disc = disc;
            terms.out_disc = out_disc;
            mean.accumulate(&terms, k);
        }
        mean.decay = self.decay_norm();
        let epoch = self.history.len() + 1;
        let total = match self.model.arch() {
            Arch::XNet => mean.total_xnet(&self.weights),
            Arch::AceNet => mean.total_acenet(&self.weights),
        };
        let record = EpochLosses {
            epoch,
            terms: mean,
            total,
        };
        self.history.push(record);
        if self.cfg.milestones.contains(&epoch) {
            self.update_prior()?;
        }
        Ok(record)
    }

    /// Replaces the loss weights by `1 - d`, with `d` the min-max scaled
    /// difference image of the current model.
    pub fn update_prior(&mut self) -> Result<()> {
        let [xh, yh, ..] = self.model.translate_tensors(&self.x, &self.y)?;
        let d = DifferenceImage::from_translations(
            &self.x.to_raster(),
            &xh.to_raster(),
            &self.y.to_raster(),
            &yh.to_raster(),
        )?;
        let lo = d.combined.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = d.combined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        self.pi = d
            .combined
            .iter()
            .map(|&v| {
                let s = if span > 0.0 { (v - lo) / span } else { 0.0 };
                (1.0 - s) as f32
            })
            .collect();
        Ok(())
    }

    pub fn train(mut self) -> Result<TrainOutcome> {
        while self.history.len() < self.cfg.epochs {
            self.run_epoch()?;
        }
        Ok(TrainOutcome {
            model: self.model,
            history: self.history,
            final_weights: self.pi,
        })
    }
}

fn adam_config(lr: f64) -> AdamConfig {
    AdamConfig {
        lr,
        ..AdamConfig::default()
    }
}

fn add_blocks<T: Real>(acc: &mut [Vec<T>], g: &[Vec<T>]) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (p, &q) in a.iter_mut().zip(b) {
            *p += q;
        }
    }
}

fn reduce<T: Real>(
    parts: Vec<Result<(f64, Vec<Vec<T>>)>>,
    mut acc: Vec<Vec<T>>,
) -> Result<(f64, Vec<Vec<T>>)> {
    let mut loss = 0.0;
    for p in parts {
        let (l, g) = p?;
        loss += l;
        add_blocks(&mut acc, &g);
    }
    Ok((loss, acc))
}

/// Convenience wrapper: builds a [`Trainer`] and runs every epoch.
pub fn train(
    arch: Arch,
    variant: Variant,
    x: &NormalizedRaster,
    y: &NormalizedRaster,
    prior: &PriorMap,
    cfg: &TrainConfig,
    weights: &LossWeights,
) -> Result<TrainOutcome> {
    Trainer::new(arch, variant, x, y, prior, cfg, weights)?.train()
}
