//! Deterministic seed derivation. Every random stream in the crate is a
//! ChaCha generator keyed by a parent seed and a stream label, so results do
//! not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `label` of `seed`.
pub fn child_seed(seed: u64, label: u64) -> u64 {
    mix(mix(seed) ^ label.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng_for(seed: u64, label: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(seed, label))
}
