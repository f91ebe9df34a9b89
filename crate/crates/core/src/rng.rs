//! Seed derivation.
//!
//! Every stochastic stage derives its generator from the run seed plus a
//! small tuple of indices, so that adding a chain or a component never
//! shifts the stream seen by an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine a base seed with a sequence of indices into a new seed.
pub fn derive_seed(seed: u64, indices: &[u64]) -> u64 {
    indices.iter().fold(mix64(seed), |acc, &i| {
        mix64(acc ^ mix64(i.wrapping_add(0x632B_E59B_D9B4_E019)))
    })
}

/// A ChaCha generator keyed by `seed` on stream `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
