//! Seed plumbing.
//!
//! All randomness in the crate flows from explicit `u64` seeds through
//! ChaCha20, so every run is reproducible and independent sub-streams can be
//! derived without coordination (e.g. one stream per posterior sample).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// splitmix64 finalizer; decorrelates nearby seed values.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed from a base seed and a stream index.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix(mix(seed) ^ mix(stream.wrapping_add(0x5851f42d4c957f2d)))
}

/// Seeded generator for a given stream.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Seeded generator directly from a seed.
pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
