use rand::{Rng, RngCore};

use super::{dropout_mask, Activation, ConvLayer, Dense, Parameterized, Real, Tensor};
use crate::error::{Error, Result};

/// Whether a forward pass applies dropout.
pub enum Mode<'a> {
    Inference,
    Train(&'a mut dyn RngCore),
}

/// Stack of 3x3 conv layers with dropout after each hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNet<T> {
    pub layers: Vec<ConvLayer<T>>,
    pub dropout: f64,
    /// Also apply dropout after the last layer (used when a head follows).
    pub drop_last: bool,
}

/// Activations saved by a training forward pass.
#[derive(Clone, Debug)]
pub struct NetCache<T> {
    /// Input seen by each layer (after the previous layer's dropout).
    inputs: Vec<Tensor<T>>,
    /// Activated output of each layer, before dropout.
    outputs: Vec<Tensor<T>>,
    masks: Vec<Option<Vec<T>>>,
    output: Tensor<T>,
}

impl<T: Real> NetCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }

    pub fn masks(&self) -> &[Option<Vec<T>>] {
        &self.masks
    }
}

impl<T: Real> ConvNet<T> {
    /// Glorot-initialized stack `in -> widths[0] -> ... -> widths[last]`.
    /// Hidden layers use leaky ReLU, the last layer `output`.
    pub fn glorot<R: Rng + ?Sized>(
        in_channels: usize,
        widths: &[usize],
        output: Activation,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut c = in_channels;
        for (i, &w) in widths.iter().enumerate() {
            let act = if i + 1 == widths.len() {
                output
            } else {
                Activation::LeakyRelu
            };
            layers.push(ConvLayer::glorot(c, w, act, rng));
            c = w;
        }
        Self {
            layers,
            dropout,
            drop_last: false,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().unwrap().out_channels
    }

    fn drops_after(&self, layer: usize) -> bool {
        self.dropout > 0.0 && (layer + 1 < self.layers.len() || self.drop_last)
    }

    /// Forward pass without caching.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = self.layers[0].forward(input)?;
        for layer in &self.layers[1..] {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    pub fn forward(&self, input: &Tensor<T>, mode: Mode<'_>) -> Result<NetCache<T>> {
        match mode {
            Mode::Inference => self.forward_with_masks(input, &vec![None; self.layers.len()]),
            Mode::Train(rng) => {
                let mut masks = Vec::with_capacity(self.layers.len());
                let mut inputs = Vec::with_capacity(self.layers.len());
                let mut outputs = Vec::with_capacity(self.layers.len());
                let mut x = input.clone();
                for (l, layer) in self.layers.iter().enumerate() {
                    let y = layer.forward(&x)?;
                    inputs.push(x);
                    let mask = self
                        .drops_after(l)
                        .then(|| dropout_mask::<T, _>(y.data.len(), self.dropout, rng));
                    x = apply_mask(&y, mask.as_deref());
                    outputs.push(y);
                    masks.push(mask);
                }
                Ok(NetCache {
                    inputs,
                    outputs,
                    masks,
                    output: x,
                })
            }
        }
    }

    /// Forward pass with explicit dropout masks (`None` = no dropout).
    pub fn forward_with_masks(
        &self,
        input: &Tensor<T>,
        masks: &[Option<Vec<T>>],
    ) -> Result<NetCache<T>> {
        if masks.len() != self.layers.len() {
            return Err(Error::shape("one dropout mask slot per layer expected"));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (layer, mask) in self.layers.iter().zip(masks) {
            let y = layer.forward(&x)?;
            inputs.push(x);
            x = apply_mask(&y, mask.as_deref());
            outputs.push(y);
        }
        Ok(NetCache {
            inputs,
            outputs,
            masks: masks.to_vec(),
            output: x,
        })
    }

    /// Back-propagates `grad_output` through a cached pass. `grads` holds
    /// this network's blocks (weights, bias per layer) and is accumulated.
    pub fn backward(
        &self,
        cache: &NetCache<T>,
        grad_output: &Tensor<T>,
        grads: &mut [Vec<T>],
        want_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        let n = self.layers.len();
        if cache.inputs.len() != n || cache.outputs.len() != n {
            return Err(Error::shape("missing or foreign forward cache"));
        }
        if grads.len() != 2 * n {
            return Err(Error::shape("gradient blocks do not match network"));
        }
        if !grad_output.same_shape(&cache.output) {
            return Err(Error::shape("upstream gradient does not match output"));
        }
        let mut g = apply_mask(grad_output, cache.masks[n - 1].as_deref());
        for l in (0..n).rev() {
            let (gw, rest) = grads[2 * l..].split_at_mut(1);
            let need = want_input || l > 0;
            let gi = self.layers[l].backward(
                &cache.inputs[l],
                &cache.outputs[l],
                &g,
                &mut gw[0],
                &mut rest[0],
                need,
            )?;
            match gi {
                Some(gi) if l > 0 => g = apply_mask(&gi, cache.masks[l - 1].as_deref()),
                other => return Ok(other),
            }
        }
        unreachable!("loop returns at layer 0")
    }
}

fn apply_mask<T: Real>(t: &Tensor<T>, mask: Option<&[T]>) -> Tensor<T> {
    match mask {
        None => t.clone(),
        Some(m) => {
            let mut out = t.clone();
            out.data.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
            out
        }
    }
}

impl<T: Real> Parameterized<T> for ConvNet<T> {
    fn blocks(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    fn decay_mask(&self) -> Vec<bool> {
        self.layers.iter().flat_map(|_| [true, false]).collect()
    }
}

/// Conv stack, global average pooling, then a dense head with one sigmoid
/// output. Pooling keeps the network independent of the input size.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub convs: ConvNet<T>,
    pub head: Dense<T>,
}

#[derive(Clone, Debug)]
pub struct DiscCache<T> {
    net: NetCache<T>,
    pooled: Vec<T>,
    out: Vec<T>,
}

impl<T: Real> DiscCache<T> {
    pub fn score(&self) -> T {
        self.out[0]
    }

    /// Dropout masks drawn by the convolutional part of the pass.
    pub fn masks(&self) -> &[Option<Vec<T>>] {
        self.net.masks()
    }
}

impl<T: Real> Discriminator<T> {
    pub fn glorot<R: Rng + ?Sized>(
        in_channels: usize,
        widths: &[usize],
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let mut convs =
            ConvNet::glorot(in_channels, widths, Activation::LeakyRelu, dropout, rng);
        convs.drop_last = true;
        let last = *widths.last().unwrap();
        let head = Dense::glorot(last, 1, Activation::Sigmoid, rng);
        Self { convs, head }
    }

    pub fn forward(&self, input: &Tensor<T>, mode: Mode<'_>) -> Result<DiscCache<T>> {
        let net = self.convs.forward(input, mode)?;
        self.finish(net)
    }

    pub fn forward_with_masks(
        &self,
        input: &Tensor<T>,
        masks: &[Option<Vec<T>>],
    ) -> Result<DiscCache<T>> {
        let net = self.convs.forward_with_masks(input, masks)?;
        self.finish(net)
    }

    fn finish(&self, net: NetCache<T>) -> Result<DiscCache<T>> {
        let pooled = global_average(net.output());
        let out = self.head.forward(&pooled)?;
        Ok(DiscCache { net, pooled, out })
    }

    pub fn infer(&self, input: &Tensor<T>) -> Result<T> {
        let feat = self.convs.infer(input)?;
        Ok(self.head.forward(&global_average(&feat))?[0])
    }

    pub fn backward(
        &self,
        cache: &DiscCache<T>,
        grad_score: T,
        grads: &mut [Vec<T>],
        want_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        let nb = grads.len();
        if nb != 2 * self.convs.layers.len() + 2 {
            return Err(Error::shape("gradient blocks do not match discriminator"));
        }
        let (conv_grads, head_grads) = grads.split_at_mut(nb - 2);
        let (gw, gb) = head_grads.split_at_mut(1);
        let g_pooled = self.head.backward(
            &cache.pooled,
            &cache.out,
            &[grad_score],
            &mut gw[0],
            &mut gb[0],
        )?;
        let feat = cache.net.output();
        let inv = T::of(1.0 / feat.pixels() as f64);
        let mut g_feat = Tensor::zeros(feat.channels, feat.height, feat.width);
        let n = feat.pixels();
        for (c, &g) in g_pooled.iter().enumerate() {
            g_feat.data[c * n..(c + 1) * n].fill(g * inv);
        }
        self.convs
            .backward(&cache.net, &g_feat, conv_grads, want_input)
    }
}

fn global_average<T: Real>(t: &Tensor<T>) -> Vec<T> {
    (0..t.channels)
        .map(|c| {
            let s = t.band(c).iter().fold(0.0f64, |a, v| a + v.f64());
            T::of(s / t.pixels() as f64)
        })
        .collect()
}

impl<T: Real> Parameterized<T> for Discriminator<T> {
    fn blocks(&self) -> Vec<&[T]> {
        let mut b = self.convs.blocks();
        b.push(&self.head.weights);
        b.push(&self.head.bias);
        b
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut b = self.convs.blocks_mut();
        b.push(&mut self.head.weights);
        b.push(&mut self.head.bias);
        b
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut m = self.convs.decay_mask();
        m.extend([true, false]);
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let data = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(c, h, w, data).unwrap()
    }

    fn flatten(net: &ConvNet<f64>) -> Vec<f64> {
        net.blocks().concat()
    }

    fn unflatten<P: Parameterized<f64> + Clone>(net: &P, flat: &[f64]) -> P {
        let mut out = net.clone();
        let mut off = 0;
        for b in out.blocks_mut() {
            b.copy_from_slice(&flat[off..off + b.len()]);
            off += b.len();
        }
        out
    }

    #[test]
    fn two_layer_stack_end_to_end_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = ConvNet::<f64>::glorot(2, &[4, 3], Activation::Tanh, 0.2, &mut rng);
        let x = random_tensor(2, 5, 5, &mut rng);
        let probe = random_tensor(3, 5, 5, &mut rng);
        let cache = net.forward(&x, Mode::Train(&mut rng)).unwrap();
        // A hidden pre-activation sits a few 1e-6 from the leaky kink, so the
        // probe step must stay well below that.
        assert!(cache.masks()[0].is_some());
        assert!(cache.masks()[1].is_none());
        let masks = cache.masks().to_vec();
        let loss = |n: &ConvNet<f64>, x: &Tensor<f64>| -> f64 {
            let c = n.forward_with_masks(x, &masks).unwrap();
            c.output().data.iter().zip(&probe.data).map(|(a, b)| a * b).sum()
        };
        let mut grads = net.zero_grads();
        let gx = net.backward(&cache, &probe, &mut grads, true).unwrap().unwrap();
        let num = gradcheck::central_difference(&flatten(&net), 1e-7, |p| loss(&unflatten(&net, p), &x));
        assert!(gradcheck::max_relative_error(&grads.concat(), &num) <= 1e-4);
        let num_x = gradcheck::central_difference(&x.data, 1e-7, |d| {
            loss(&net, &Tensor::new(2, 5, 5, d.to_vec()).unwrap())
        });
        assert!(gradcheck::max_relative_error(&gx.data, &num_x) <= 1e-4);
    }

    #[test]
    fn discriminator_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let d = Discriminator::<f64>::glorot(3, &[4, 3, 2], 0.2, &mut rng);
        let x = random_tensor(3, 4, 6, &mut rng);
        let cache = d.forward(&x, Mode::Train(&mut rng)).unwrap();
        let masks = cache.net.masks().to_vec();
        assert!(masks.iter().all(|m| m.is_some()));
        let score = |dd: &Discriminator<f64>, x: &Tensor<f64>| {
            dd.forward_with_masks(x, &masks).unwrap().score()
        };
        let mut grads = d.zero_grads();
        let gx = d.backward(&cache, 1.0, &mut grads, true).unwrap().unwrap();
        let flat = d.blocks().concat();
        let num = gradcheck::central_difference(&flat, 1e-5, |p| score(&unflatten(&d, p), &x));
        assert!(gradcheck::max_relative_error(&grads.concat(), &num) <= 1e-4);
        let num_x = gradcheck::central_difference(&x.data, 1e-5, |v| {
            score(&d, &Tensor::new(3, 4, 6, v.to_vec()).unwrap())
        });
        assert!(gradcheck::max_relative_error(&gx.data, &num_x) <= 1e-4);
    }

    #[test]
    fn inference_is_deterministic_and_ignores_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let net = ConvNet::<f32>::glorot(1, &[8, 1], Activation::Tanh, 0.5, &mut rng);
        let x = Tensor::from_raster(&crate::raster::Raster::from_fn(6, 6, 1, |_, i, j| {
            (i as f32 - j as f32) / 6.0
        }));
        let a = net.infer(&x).unwrap();
        let b = net.forward(&x, Mode::Inference).unwrap();
        assert_eq!(&a, b.output());
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let a = ConvNet::<f64>::glorot(1, &[2, 1], Activation::Tanh, 0.0, &mut rng);
        let b = ConvNet::<f64>::glorot(1, &[2, 2, 1], Activation::Tanh, 0.0, &mut rng);
        let x = random_tensor(1, 3, 3, &mut rng);
        let cache = a.forward(&x, Mode::Inference).unwrap();
        let mut g = b.zero_grads();
        assert!(b.backward(&cache, cache.output(), &mut g, false).is_err());
    }
}
