//! Small fully convolutional networks with hand-written backward passes.
//!
//! Everything is generic over [`Real`] so the same code trains in `f32` and is
//! gradient-checked in `f64`.

mod adam;
mod conv;
mod dense;
mod dropout;
pub mod gradcheck;
mod init;
mod network;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use conv::ConvLayer;
pub use dense::Dense;
pub use dropout::dropout_mask;
pub use init::{glorot_std, glorot_truncated, truncated_normal_variance_factor};
pub use network::{ConvNet, DiscCache, Discriminator, Mode, NetCache};
pub use tensor::Tensor;

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Slope of the leaky ReLU for negative arguments.
pub const LEAKY_SLOPE: f64 = 0.3;

/// Floating-point element type of tensors and parameters.
pub trait Real:
    num_traits::Float + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    fn of(v: f64) -> Self;

    fn f64(self) -> f64;

    /// `C <- alpha A B + beta C` over strided views.
    ///
    /// # Safety
    /// Every index reachable through the given dimensions and strides must be
    /// in bounds of the corresponding buffer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }

    fn f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }

    fn f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A strided matrix view into a slice.
#[derive(Clone, Copy)]
pub(crate) struct View {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn row_major(cols: usize) -> Self {
        Self {
            offset: 0,
            rs: cols,
            cs: 1,
        }
    }

    pub fn transposed(cols: usize) -> Self {
        Self {
            offset: 0,
            rs: 1,
            cs: cols,
        }
    }

    pub fn at(self, offset: usize) -> Self {
        Self { offset, ..self }
    }

    fn last(self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// Bounds-checked `C <- A B + beta C` with `A: m x k`, `B: k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    av: View,
    b: &[T],
    bv: View,
    beta: T,
    c: &mut [T],
    cv: View,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(cv.last(m, n) < c.len(), "gemm: C view out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let p = cv.offset + i * cv.rs + j * cv.cs;
                c[p] = c[p] * beta;
            }
        }
        return;
    }
    assert!(av.last(m, k) < a.len(), "gemm: A view out of bounds");
    assert!(bv.last(k, n) < b.len(), "gemm: B view out of bounds");
    // SAFETY: the three asserts above bound every index the kernel touches.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::LeakyRelu => {
                if x > T::zero() {
                    x
                } else {
                    x * T::of(LEAKY_SLOPE)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation's output `y`. At the
    /// leaky-ReLU kink (`y == 0`) the negative-side slope is used.
    #[inline]
    pub fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::LeakyRelu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::of(LEAKY_SLOPE)
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Linear => T::one(),
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Activation::LeakyRelu => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
            Activation::Linear => 3,
        }
    }
}

/// Ordered parameter blocks of a model. Block order defines checkpoint
/// layout, optimizer state, and gradient layout.
pub trait Parameterized<T: Real> {
    fn blocks(&self) -> Vec<&[T]>;

    fn blocks_mut(&mut self) -> Vec<&mut [T]>;

    /// `true` for blocks included in the weight-decay norm (kernels and dense
    /// weights, not biases).
    fn decay_mask(&self) -> Vec<bool>;

    fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    fn zero_grads(&self) -> Vec<Vec<T>> {
        self.blocks().iter().map(|b| vec![T::zero(); b.len()]).collect()
    }

    /// Squared L2 norm of the decayed blocks.
    fn decay_norm_sq(&self) -> f64 {
        self.blocks()
            .iter()
            .zip(self.decay_mask())
            .filter(|(_, d)| *d)
            .flat_map(|(b, _)| b.iter())
            .map(|v| v.f64() * v.f64())
            .sum()
    }

    /// Adds the gradient of `weight * ||theta||^2` to `grads`.
    fn add_decay_grad(&self, weight: f64, grads: &mut [Vec<T>]) {
        if weight == 0.0 {
            return;
        }
        for ((b, g), d) in self.blocks().iter().zip(grads.iter_mut()).zip(self.decay_mask()) {
            if d {
                for (gv, &v) in g.iter_mut().zip(b.iter()) {
                    *gv += T::of(2.0 * weight * v.f64());
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_values() {
        assert!((Activation::LeakyRelu.apply(-2.0f64) + 0.6).abs() < 1e-15);
        assert_eq!(Activation::LeakyRelu.apply(1.5f64), 1.5);
        assert_eq!(Activation::Tanh.apply(0.0f64), 0.0);
        assert_eq!(Activation::Sigmoid.apply(0.0f64), 0.5);
        assert_eq!(Activation::LeakyRelu.derivative_from_output(0.0f64), LEAKY_SLOPE);
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        let h = 1e-5;
        for act in [
            Activation::LeakyRelu,
            Activation::Tanh,
            Activation::Sigmoid,
            Activation::Linear,
        ] {
            for &x in &[-2.3f64, -0.7, -0.05, 0.04, 0.6, 1.9] {
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                let an = act.derivative_from_output(act.apply(x));
                assert!((fd - an).abs() <= 1e-6, "{act:?} at {x}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn gemm_matches_naive_on_strided_views() {
        // A (2x3) stored transposed, B (3x2) row-major, C written with row stride 5.
        let a_t = [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0];
        let b = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut c = vec![1.0f64; 10];
        gemm(
            2,
            3,
            2,
            &a_t,
            View::transposed(2),
            &b,
            View::row_major(2),
            1.0,
            &mut c,
            View { offset: 1, rs: 5, cs: 1 },
        );
        assert_eq!(c[1], 1.0 + 22.0);
        assert_eq!(c[2], 1.0 + 28.0);
        assert_eq!(c[6], 1.0 + 49.0);
        assert_eq!(c[7], 1.0 + 64.0);
        assert_eq!(c[0], 1.0);
    }
}
