use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Real;

/// Standard deviation of the Glorot normal initializer.
pub fn glorot_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Variance of a standard normal truncated to `[-2, 2]`.
pub fn truncated_normal_variance_factor() -> f64 {
    // 1 - 2 * 2 * phi(2) / (2 Phi(2) - 1)
    let phi2 = (-2.0f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mass = 0.954_499_736_103_641_6;
    1.0 - 4.0 * phi2 / mass
}

/// Samples of `N(0, 2 / (fan_in + fan_out))` truncated at two standard
/// deviations (out-of-range draws are redrawn).
pub fn glorot_truncated<T: Real, R: Rng + ?Sized>(
    fan_in: usize,
    fan_out: usize,
    len: usize,
    rng: &mut R,
) -> Vec<T> {
    let std = glorot_std(fan_in, fan_out);
    (0..len)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break T::of(z * std);
            }
        })
        .collect()
}
