use super::{Parameterized, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Classic Adam with bias correction. Moment buffers are created lazily on
/// the first step and kept per parameter block.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<T: Real, P: Parameterized<T> + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &[Vec<T>],
    ) -> Result<()> {
        let mut blocks = params.blocks_mut();
        if blocks.len() != grads.len()
            || blocks.iter().zip(grads).any(|(b, g)| b.len() != g.len())
        {
            return Err(Error::shape("gradient blocks do not match parameters"));
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (bi, block) in blocks.iter_mut().enumerate() {
            let (m, v) = (&mut self.first[bi], &mut self.second[bi]);
            for (i, p) in block.iter_mut().enumerate() {
                let g = grads[bi][i].f64();
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                *p = T::of(p.f64() - update);
            }
        }
        Ok(())
    }
}
