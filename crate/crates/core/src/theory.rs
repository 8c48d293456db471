//! Monte Carlo check that the no-change-conditional translation error equals
//! an unconditional error weighted by `psi = 1 / (P(H0) + P(H1) * Lambda)`.
//!
//! The fixture is a single pixel pair `(x, y)`. Under H0 the pair is a
//! standard bivariate Gaussian with correlation `rho`; under H1 the two values
//! are independent unit Gaussians and `x` is shifted by `shift`. The
//! translation is the fixed map `G(y) = gain * y`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Smallest sample count accepted by [`verify_equivalence`].
pub const MIN_SAMPLES: usize = 1_000;
const CHUNK: usize = 10_000;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianModel {
    pub p_h0: f64,
    pub rho: f64,
    pub shift: f64,
    pub gain: f64,
}

impl Default for GaussianModel {
    fn default() -> Self {
        Self::new(0.8)
    }
}

impl GaussianModel {
    /// Fixture with correlation 0.9, shift 2 and the H0 regression gain.
    pub fn new(p_h0: f64) -> Self {
        Self {
            p_h0,
            rho: 0.9,
            shift: 2.0,
            gain: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_h0 > 0.0 && self.p_h0 <= 1.0) {
            return Err(Error::config(format!(
                "P(H0) must lie in (0, 1], got {}",
                self.p_h0
            )));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::config("correlation must lie in (-1, 1)"));
        }
        if !(self.shift.is_finite() && self.gain.is_finite()) {
            return Err(Error::config("shift and gain must be finite"));
        }
        Ok(())
    }

    pub fn log_density_h0(&self, x: f64, y: f64) -> f64 {
        let s = 1.0 - self.rho * self.rho;
        let q = (x * x - 2.0 * self.rho * x * y + y * y) / s;
        -LN_2PI - 0.5 * s.ln() - 0.5 * q
    }

    pub fn log_density_h1(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.shift;
        -LN_2PI - 0.5 * (dx * dx + y * y)
    }

    /// `p(x, y | H1) / p(x, y | H0)`.
    pub fn likelihood_ratio(&self, x: f64, y: f64) -> f64 {
        (self.log_density_h1(x, y) - self.log_density_h0(x, y)).exp()
    }

    pub fn translation_error(&self, x: f64, y: f64) -> f64 {
        let r = self.gain * y - x;
        r * r
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> (bool, f64, f64) {
        let u: f64 = rng.random();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        if u < self.p_h0 {
            let x = self.rho * z1 + (1.0 - self.rho * self.rho).sqrt() * z2;
            (true, x, z1)
        } else {
            (false, self.shift + z1, z2)
        }
    }
}

/// A weight and whether it was obtained as the `Lambda -> infinity` limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Psi {
    pub value: f64,
    pub limit: bool,
}

/// `1 / (p_h0 + (1 - p_h0) * lambda)` for a likelihood ratio `lambda >= 0`.
pub fn psi_from_ratio(lambda: f64, p_h0: f64) -> Psi {
    if lambda.is_infinite() {
        return Psi {
            value: 0.0,
            limit: true,
        };
    }
    Psi {
        value: 1.0 / (p_h0 + (1.0 - p_h0) * lambda),
        limit: false,
    }
}

pub fn psi(x: f64, y: f64, model: &GaussianModel) -> Psi {
    let l0 = model.log_density_h0(x, y);
    let l1 = model.log_density_h1(x, y);
    if l0 == f64::NEG_INFINITY && l1 > f64::NEG_INFINITY {
        return psi_from_ratio(f64::INFINITY, model.p_h0);
    }
    psi_from_ratio((l1 - l0).exp(), model.p_h0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub p_h0: f64,
    pub samples: usize,
    pub seed: u64,
    /// Draws that came from H0 and entered the conditional estimator.
    pub h0_draws: usize,
    /// Mean translation error over H0 draws only.
    pub conditional: f64,
    /// Mean of `psi * error` over all draws.
    pub weighted: f64,
    /// `|weighted - conditional| / conditional`.
    pub relative_difference: f64,
    pub psi_min: f64,
    pub psi_max: f64,
    /// Weights that came out as the infinite-ratio limit.
    pub psi_limits: usize,
    /// Weights outside `(0, 1 / P(H0)]`.
    pub bound_violations: usize,
    /// Mean of `Pi * error` with the surrogate weight `Pi = 1 - P(H1 | x, y)`.
    pub surrogate: f64,
    /// `|surrogate - conditional| / conditional`.
    pub surrogate_gap: f64,
}

impl EquivalenceReport {
    pub const CSV_HEADER: &'static str = "seed,p_h0,samples,h0_draws,conditional,weighted,\
relative_difference,psi_min,psi_max,psi_limits,bound_violations,surrogate,surrogate_gap";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.17},{:.17},{:.17},{:e},{:e},{},{},{:.17},{:.17}",
            self.seed,
            self.p_h0,
            self.samples,
            self.h0_draws,
            self.conditional,
            self.weighted,
            self.relative_difference,
            self.psi_min,
            self.psi_max,
            self.psi_limits,
            self.bound_violations,
            self.surrogate,
            self.surrogate_gap
        )
    }
}

#[derive(Clone, Copy, Debug)]
struct Partial {
    h0: usize,
    cond: f64,
    weighted: f64,
    surrogate: f64,
    psi_min: f64,
    psi_max: f64,
    limits: usize,
    violations: usize,
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

fn run_chunk(model: &GaussianModel, seed: u64, chunk: usize, len: usize) -> Partial {
    let mut rng = chunk_rng(seed, chunk);
    let upper = 1.0 / model.p_h0;
    let mut p = Partial {
        h0: 0,
        cond: 0.0,
        weighted: 0.0,
        surrogate: 0.0,
        psi_min: f64::INFINITY,
        psi_max: f64::NEG_INFINITY,
        limits: 0,
        violations: 0,
    };
    for _ in 0..len {
        let (is_h0, x, y) = model.draw(&mut rng);
        let err = model.translation_error(x, y);
        let w = psi(x, y, model);
        if is_h0 {
            p.h0 += 1;
            p.cond += err;
        }
        p.weighted += w.value * err;
        // The posterior probability of no change is P(H0) * psi.
        p.surrogate += model.p_h0 * w.value * err;
        p.psi_min = p.psi_min.min(w.value);
        p.psi_max = p.psi_max.max(w.value);
        p.limits += w.limit as usize;
        if !(w.value > 0.0 && w.value <= upper) {
            p.violations += 1;
        }
    }
    p
}

/// Estimates both sides of the equivalence from `n_samples` draws. Draws are
/// split into fixed chunks, each with its own random stream, so the result
/// does not depend on the thread count and smaller runs are prefixes of
/// larger ones.
pub fn verify_equivalence(
    model: &GaussianModel,
    n_samples: usize,
    seed: u64,
) -> Result<EquivalenceReport> {
    model.validate()?;
    if n_samples < MIN_SAMPLES {
        return Err(Error::config(format!(
            "at least {MIN_SAMPLES} samples are required, got {n_samples}"
        )));
    }
    let chunks = n_samples.div_ceil(CHUNK);
    let partials: Vec<Partial> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(n_samples - c * CHUNK);
            run_chunk(model, seed, c, len)
        })
        .collect();

    let mut total = partials[0];
    for p in &partials[1..] {
        total.h0 += p.h0;
        total.cond += p.cond;
        total.weighted += p.weighted;
        total.surrogate += p.surrogate;
        total.psi_min = total.psi_min.min(p.psi_min);
        total.psi_max = total.psi_max.max(p.psi_max);
        total.limits += p.limits;
        total.violations += p.violations;
    }
    if total.h0 == 0 {
        return Err(Error::Undefined("no draw came from H0".into()));
    }
    let conditional = total.cond / total.h0 as f64;
    let weighted = total.weighted / n_samples as f64;
    let surrogate = total.surrogate / n_samples as f64;
    Ok(EquivalenceReport {
        p_h0: model.p_h0,
        samples: n_samples,
        seed,
        h0_draws: total.h0,
        conditional,
        weighted,
        relative_difference: (weighted - conditional).abs() / conditional,
        psi_min: total.psi_min,
        psi_max: total.psi_max,
        psi_limits: total.limits,
        bound_violations: total.violations,
        surrogate,
        surrogate_gap: (surrogate - conditional).abs() / conditional,
    })
}

/// Mean error over `n_samples` draws taken directly from H0, without
/// rejection.
pub fn conditional_direct(model: &GaussianModel, n_samples: usize, seed: u64) -> Result<f64> {
    model.validate()?;
    if n_samples == 0 {
        return Err(Error::config("at least one sample is required"));
    }
    let direct = GaussianModel { p_h0: 1.0, ..*model };
    let chunks = n_samples.div_ceil(CHUNK);
    let sums: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let len = CHUNK.min(n_samples - c * CHUNK);
            (0..len)
                .map(|_| {
                    let (_, x, y) = direct.draw(&mut rng);
                    direct.translation_error(x, y)
                })
                .sum()
        })
        .collect();
    Ok(sums.iter().sum::<f64>() / n_samples as f64)
}
