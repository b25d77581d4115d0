//! Seeded randomness.
//!
//! Every random draw in the crate comes from [`seeded`]: ChaCha8 keyed by
//! `rand_chacha::ChaCha8Rng::seed_from_u64(seed)`. Uniform reals in
//! `[0, 1)` take the top 53 bits of `next_u64()`; normals use the
//! Box-Muller transform on two such uniforms (cosine branch only), so the
//! stream can be reproduced outside Rust from the ChaCha8 key schedule.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in `[0, 1)` with 53 random bits.
#[inline]
pub fn uniform(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
pub fn standard_normal(rng: &mut Rng) -> f64 {
    let u1 = 1.0 - uniform(rng); // (0, 1]
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform integer in `0..n`, `n >= 1`.
#[inline]
pub fn below(rng: &mut Rng, n: usize) -> usize {
    ((uniform(rng) * n as f64) as usize).min(n - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let (mut a, mut b) = (seeded(42), seeded(42));
        for _ in 0..100 {
            assert_eq!(standard_normal(&mut a).to_bits(), standard_normal(&mut b).to_bits());
        }
        assert_ne!(uniform(&mut seeded(1)), uniform(&mut seeded(2)));
    }

    #[test]
    fn normal_moments() {
        let mut rng = seeded(7);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = seeded(3);
        let mut seen = [false; 5];
        for _ in 0..1000 {
            seen[below(&mut rng, 5)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
