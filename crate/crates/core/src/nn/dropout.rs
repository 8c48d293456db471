use rand::Rng;

use super::Real;

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`, so the expected activation is unchanged and inference
/// needs no rescaling.
pub fn dropout_mask<T: Real, R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
    if rate == 0.0 {
        return vec![T::one(); len];
    }
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(dropout_mask::<f64, _>(100, 0.0, &mut rng).iter().all(|&m| m == 1.0));
    }

    #[test]
    fn preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mask = dropout_mask::<f64, _>(100_000, 0.2, &mut rng);
        let mean = mask.iter().sum::<f64>() / mask.len() as f64;
        assert!((0.99..=1.01).contains(&mean), "mean {mean}");
        let dropped = mask.iter().filter(|&&m| m == 0.0).count() as f64 / 1e5;
        assert!((dropped - 0.2).abs() < 0.01);
        assert!(mask.iter().all(|&m| m == 0.0 || m == 1.25));
    }
}
