//! 3x3 convolution, stride 1, zero padding 1, computed as im2col + GEMM over
//! bounded pixel tiles so full scenes never materialize a full column matrix.

use rand::Rng;

use super::{gemm, glorot_truncated, Activation, Real, Tensor, View};
use crate::error::{Error, Result};

const TAPS: usize = 9;
/// Upper bound on elements of one im2col tile.
const TILE_ELEMS: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out x (in * 9)`, row-major; tap index is `ci * 9 + ky * 3 + kx`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, activation: Activation) -> Self {
        Self {
            in_channels,
            out_channels,
            weights: vec![T::zero(); out_channels * in_channels * TAPS],
            bias: vec![T::zero(); out_channels],
            activation,
        }
    }

    /// Glorot truncated-normal kernels, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(in_channels, out_channels, activation);
        layer.weights = glorot_truncated(
            in_channels * TAPS,
            out_channels * TAPS,
            layer.weights.len(),
            rng,
        );
        layer
    }

    pub fn weight_mut(&mut self, co: usize, ci: usize, ky: usize, kx: usize) -> &mut T {
        &mut self.weights[co * self.in_channels * TAPS + ci * TAPS + ky * 3 + kx]
    }

    fn tile_len(&self, pixels: usize) -> usize {
        (TILE_ELEMS / (self.in_channels * TAPS)).clamp(1, pixels)
    }

    /// Cross-correlation with zero padding, bias, then activation.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if input.channels != self.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, input.channels
            )));
        }
        let (h, w) = (input.height, input.width);
        let n = h * w;
        let kdim = self.in_channels * TAPS;
        let mut out = Tensor::zeros(self.out_channels, h, w);
        for co in 0..self.out_channels {
            out.data[co * n..(co + 1) * n].fill(self.bias[co]);
        }
        let tile = self.tile_len(n);
        let mut cols = vec![T::zero(); kdim * tile];
        for p0 in (0..n).step_by(tile) {
            let t = tile.min(n - p0);
            im2col(input, p0, t, &mut cols);
            gemm(
                self.out_channels,
                kdim,
                t,
                &self.weights,
                View::row_major(kdim),
                &cols,
                View::row_major(t),
                T::one(),
                &mut out.data,
                View::row_major(n).at(p0),
            );
        }
        let act = self.activation;
        if act != Activation::Linear {
            out.data.iter_mut().for_each(|v| *v = act.apply(*v));
        }
        Ok(out)
    }

    /// Back-propagates `grad_output` (gradient w.r.t. this layer's activated
    /// output). Parameter gradients are accumulated into `grad_weights` and
    /// `grad_bias`; the input gradient is returned when `want_input` is set.
    pub fn backward(
        &self,
        input: &Tensor<T>,
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
        grad_weights: &mut [T],
        grad_bias: &mut [T],
        want_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        if !output.same_shape(grad_output)
            || output.channels != self.out_channels
            || input.channels != self.in_channels
            || input.height != output.height
            || input.width != output.width
        {
            return Err(Error::shape("conv backward: cached tensors do not match"));
        }
        let (h, w) = (input.height, input.width);
        let n = h * w;
        let kdim = self.in_channels * TAPS;

        // Gradient w.r.t. the pre-activation.
        let act = self.activation;
        let delta: Vec<T> = if act == Activation::Linear {
            grad_output.data.clone()
        } else {
            grad_output
                .data
                .iter()
                .zip(&output.data)
                .map(|(&g, &y)| g * act.derivative_from_output(y))
                .collect()
        };
        for (co, gb) in grad_bias.iter_mut().enumerate() {
            let s = delta[co * n..(co + 1) * n]
                .iter()
                .fold(0.0f64, |acc, v| acc + v.f64());
            *gb += T::of(s);
        }

        let mut grad_input = want_input.then(|| Tensor::zeros(self.in_channels, h, w));
        let tile = self.tile_len(n);
        let mut cols = vec![T::zero(); kdim * tile];
        let mut dcols = if want_input {
            vec![T::zero(); kdim * tile]
        } else {
            Vec::new()
        };
        for p0 in (0..n).step_by(tile) {
            let t = tile.min(n - p0);
            im2col(input, p0, t, &mut cols);
            // dW += delta_tile * cols^T
            gemm(
                self.out_channels,
                t,
                kdim,
                &delta,
                View::row_major(n).at(p0),
                &cols,
                View::transposed(t),
                T::one(),
                grad_weights,
                View::row_major(kdim),
            );
            if let Some(gi) = grad_input.as_mut() {
                // dcols = W^T * delta_tile
                gemm(
                    kdim,
                    self.out_channels,
                    t,
                    &self.weights,
                    View::transposed(kdim),
                    &delta,
                    View::row_major(n).at(p0),
                    T::zero(),
                    &mut dcols,
                    View::row_major(t),
                );
                col2im(&dcols, p0, t, gi);
            }
        }
        Ok(grad_input)
    }
}

/// Calls `f(q, r, c0, len)` for each run of output pixels `p0 .. p0 + t`
/// that lies on one image row: tile offset `q`, row `r`, first column `c0`.
fn row_runs(p0: usize, t: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let mut q = 0;
    while q < t {
        let p = p0 + q;
        let (r, c0) = (p / w, p % w);
        let len = (w - c0).min(t - q);
        f(q, r, c0, len);
        q += len;
    }
}

/// Source column range of tap offset `dx` (0, 1 or 2) for output columns
/// `c0 .. c0 + len`: the destination offsets to zero-fill at each end and the
/// first source column.
fn tap_span(c0: usize, len: usize, w: usize, dx: usize) -> (usize, usize, usize) {
    let lead = usize::from(dx == 0 && c0 == 0);
    let trail = usize::from(dx == 2 && c0 + len == w);
    (lead, trail, c0 + lead + dx - 1)
}

/// Fills `cols` (`(C * 9) x t`, row stride `t`) with the 3x3 neighbourhoods of
/// output pixels `p0 .. p0 + t`.
fn im2col<T: Real>(input: &Tensor<T>, p0: usize, t: usize, cols: &mut [T]) {
    let (h, w) = (input.height, input.width);
    let n = input.pixels();
    for ci in 0..input.channels {
        let band = &input.data[ci * n..(ci + 1) * n];
        for dy in 0..3 {
            for dx in 0..3 {
                let row = (ci * TAPS + dy * 3 + dx) * t;
                let dst = &mut cols[row..row + t];
                row_runs(p0, t, w, |q, r, c0, len| {
                    let out = &mut dst[q..q + len];
                    if r + dy == 0 || r + dy > h {
                        out.fill(T::zero());
                        return;
                    }
                    let src_row = (r + dy - 1) * w;
                    let (lead, trail, sc) = tap_span(c0, len, w, dx);
                    let m = len - lead - trail;
                    out[..lead].fill(T::zero());
                    out[lead..lead + m].copy_from_slice(&band[src_row + sc..src_row + sc + m]);
                    out[lead + m..].fill(T::zero());
                });
            }
        }
    }
}

/// Scatter-adds column gradients back onto the input grid.
fn col2im<T: Real>(dcols: &[T], p0: usize, t: usize, grad: &mut Tensor<T>) {
    let (h, w) = (grad.height, grad.width);
    let n = grad.pixels();
    for ci in 0..grad.channels {
        let band = &mut grad.data[ci * n..(ci + 1) * n];
        for dy in 0..3 {
            for dx in 0..3 {
                let row = (ci * TAPS + dy * 3 + dx) * t;
                let src = &dcols[row..row + t];
                row_runs(p0, t, w, |q, r, c0, len| {
                    if r + dy == 0 || r + dy > h {
                        return;
                    }
                    let dst_row = (r + dy - 1) * w;
                    let (lead, trail, sc) = tap_span(c0, len, w, dx);
                    let m = len - lead - trail;
                    let dst = &mut band[dst_row + sc..dst_row + sc + m];
                    for (d, &g) in dst.iter_mut().zip(&src[q + lead..q + lead + m]) {
                        *d += g;
                    }
                });
            }
        }
    }
}
