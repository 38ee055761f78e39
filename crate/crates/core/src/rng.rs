//! Seed derivation. Every random draw in the crate comes from a ChaCha stream
//! whose seed is a pure function of the run seed and a small tuple of indices,
//! so serial and parallel schedules produce identical outputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a base seed and a path of indices.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

/// Stream labels so that different consumers of the same seed never collide.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const WORLD: u64 = 2;
    pub const SFT: u64 = 3;
    pub const SAMPLE: u64 = 4;
    pub const TRANSLATE: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const CORRUPT: u64 = 7;
    pub const GRADCHECK: u64 = 8;
    pub const ROUND: u64 = 9;
}

pub fn rng_for(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(seed, path))
}
