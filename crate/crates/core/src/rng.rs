//! Deterministic seed derivation for independent random streams.
//!
//! Every stochastic component (ground-truth draws, sensor noise, episode
//! workers, Dirichlet noise) owns a `ChaCha8Rng` seeded through
//! [`derive_seed`] so that results are reproducible regardless of worker
//! scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a stream label and an index into a fresh 64-bit
/// seed (SplitMix64 finalizer). Distinct (label, index) pairs yield
/// independent streams for the same base seed.
pub fn derive_seed(base: u64, label: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(label.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream labels used across the crate. Centralized so independent
/// components never collide on the same derived stream.
pub mod stream {
    pub const GROUND_TRUTH: u64 = 1;
    pub const MEASUREMENT: u64 = 2;
    pub const EPISODE: u64 = 3;
    pub const ROOT_NOISE: u64 = 4;
    pub const POLICY_SAMPLE: u64 = 5;
    pub const NET_INIT: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const PLANNER: u64 = 8;
    pub const EPISODE_SETUP: u64 = 9;
}

/// Fresh ChaCha8 generator for a derived stream.
pub fn rng_for(base: u64, label: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, label, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, 1, 0), derive_seed(7, 1, 0));
        assert_ne!(derive_seed(7, 1, 0), derive_seed(7, 1, 1));
        assert_ne!(derive_seed(7, 1, 0), derive_seed(7, 2, 0));
        assert_ne!(derive_seed(7, 1, 0), derive_seed(8, 1, 0));
    }
}
