use rand::Rng;

use super::{glorot_truncated, Activation, Real};
use crate::error::{Error, Result};

/// Fully connected layer `y = act(W x + b)` with `W: outputs x inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
            activation,
        }
    }

    pub fn glorot<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut d = Self::zeros(inputs, outputs, activation);
        d.weights = glorot_truncated(inputs, outputs, inputs * outputs, rng);
        d
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.inputs {
            return Err(Error::shape(format!(
                "dense expects {} inputs, got {}",
                self.inputs,
                x.len()
            )));
        }
        Ok((0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                let z = row
                    .iter()
                    .zip(x)
                    .fold(self.bias[o].f64(), |acc, (&w, &v)| acc + w.f64() * v.f64());
                self.activation.apply(T::of(z))
            })
            .collect())
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(
        &self,
        x: &[T],
        y: &[T],
        grad_y: &[T],
        grad_weights: &mut [T],
        grad_bias: &mut [T],
    ) -> Result<Vec<T>> {
        if x.len() != self.inputs || y.len() != self.outputs || grad_y.len() != self.outputs {
            return Err(Error::shape("dense backward: cached values do not match"));
        }
        let mut grad_x = vec![T::zero(); self.inputs];
        for o in 0..self.outputs {
            let delta = grad_y[o] * self.activation.derivative_from_output(y[o]);
            grad_bias[o] += delta;
            let row = o * self.inputs;
            for i in 0..self.inputs {
                grad_weights[row + i] += delta * x[i];
                grad_x[i] += delta * self.weights[row + i];
            }
        }
        Ok(grad_x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_activated_bias() {
        let mut d = Dense::<f64>::zeros(4, 1, Activation::Sigmoid);
        d.bias = vec![0.7];
        let y = d.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(y[0], 1.0 / (1.0 + (-0.7f64).exp()));
    }

    #[test]
    fn scalar_input() {
        let mut d = Dense::<f64>::zeros(1, 1, Activation::Sigmoid);
        d.weights = vec![2.0];
        d.bias = vec![-1.0];
        let y = d.forward(&[0.25]).unwrap();
        assert!((y[0] - 1.0 / (1.0 + 0.5f64.exp())).abs() < 1e-15);
        assert!(d.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut d = Dense::<f64>::glorot(5, 2, Activation::Sigmoid, &mut rng);
        d.bias = vec![0.1, -0.2];
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let probe = [0.7, -1.3];
        let loss = |d: &Dense<f64>, x: &[f64]| -> f64 {
            d.forward(x).unwrap().iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let y = d.forward(&x).unwrap();
        let mut gw = vec![0.0; 10];
        let mut gb = vec![0.0; 2];
        let gx = d.backward(&x, &y, &probe, &mut gw, &mut gb).unwrap();
        let nw = gradcheck::central_difference(&d.weights, 1e-5, |w| {
            let mut dd = d.clone();
            dd.weights = w.to_vec();
            loss(&dd, &x)
        });
        let nb = gradcheck::central_difference(&d.bias, 1e-5, |b| {
            let mut dd = d.clone();
            dd.bias = b.to_vec();
            loss(&dd, &x)
        });
        let nx = gradcheck::central_difference(&x, 1e-5, |xx| loss(&d, xx));
        assert!(gradcheck::max_relative_error(&gw, &nw) <= 1e-4);
        assert!(gradcheck::max_relative_error(&gb, &nb) <= 1e-4);
        assert!(gradcheck::max_relative_error(&gx, &nx) <= 1e-4);
    }
}
