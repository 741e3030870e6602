//! Seed derivation and sampling helpers.
//!
//! Every stochastic component takes an explicit [`ChaCha8Rng`] so that runs
//! are reproducible bit-for-bit from a single seed.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
pub use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// splitmix64 finalizer; used to fold structured context (task id, SNR,
/// channel kind) into stream-independent sub-seeds.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a base seed and a sequence of context words.
pub fn derive_seed(base: u64, context: &[u64]) -> u64 {
    let mut acc = splitmix(base);
    for &c in context {
        acc = splitmix(acc ^ c);
    }
    acc
}

pub fn rng_from(base: u64, context: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, context))
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal draw.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_depend_on_context() {
        let a = derive_seed(42, &[1, 2]);
        let b = derive_seed(42, &[2, 1]);
        let c = derive_seed(42, &[1, 2]);
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn streams_are_reproducible() {
        let mut r1 = rng_from(7, &[3]);
        let mut r2 = rng_from(7, &[3]);
        for _ in 0..100 {
            assert_eq!(normal(&mut r1).to_bits(), normal(&mut r2).to_bits());
        }
    }
}
