//! Seed derivation and random streams.
//!
//! All randomness flows from `u64` seeds. Child seeds are derived with
//! [`mix`], the SplitMix64 finalizer applied to `seed + (index + 1)·φ64`
//! where φ64 = 0x9E3779B97F4A7C15. Each derived seed keys a ChaCha8 stream
//! ([`stream`]), a counter-based generator with a published reference
//! definition, so streams are reproducible independently of this crate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the `index`-th child seed of `seed`.
pub fn mix(seed: u64, index: u64) -> u64 {
    splitmix64(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
