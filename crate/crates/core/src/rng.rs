//! Deterministic RNG stream derivation.
//!
//! Every stochastic draw in the toolkit comes from a ChaCha stream whose
//! seed is a pure function of the run seed plus a structural position
//! (epoch, segment, purpose). Two consequences: resuming a run replays the
//! exact draws of an uninterrupted one, and consuming extra draws in one
//! stream (e.g. the converted-path epsilons that the plain VAE never
//! takes) cannot shift the draws of another.

use rand_chacha::rand_core::SeedableRng;
pub use rand_chacha::ChaCha12Rng;

/// splitmix64 finalizer; the standard 64-bit mixer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Collapse a seed plus structural coordinates into one stream seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut acc = mix(seed);
    for &p in parts {
        acc = mix(acc ^ mix(p));
    }
    acc
}

pub fn stream(seed: u64, parts: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(seed, parts))
}

/// Purpose tags for the per-segment training streams.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const EPS_REAL: u64 = 3;
    pub const EPS_CONVERTED: u64 = 4;
    pub const DROPOUT: u64 = 5;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable_and_sensitive() {
        let a = derive_seed(42, &[1, 2, 3]);
        assert_eq!(a, derive_seed(42, &[1, 2, 3]));
        assert_ne!(a, derive_seed(42, &[1, 2, 4]));
        assert_ne!(a, derive_seed(43, &[1, 2, 3]));
        assert_ne!(derive_seed(42, &[1]), derive_seed(42, &[1, 0]));
    }

    #[test]
    fn streams_reproduce() {
        let mut a = stream(7, &[0, 5]);
        let mut b = stream(7, &[0, 5]);
        let xs: Vec<f64> = (0..8).map(|_| a.random()).collect();
        let ys: Vec<f64> = (0..8).map(|_| b.random()).collect();
        assert_eq!(xs, ys);
    }
}
