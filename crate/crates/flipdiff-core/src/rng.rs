//! Seed derivation for counter-based random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combines a parent seed with a child key.
pub fn derive_seed(parent: u64, key: u64) -> u64 {
    splitmix64(parent ^ splitmix64(key.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Hashes integer lattice coordinates into a stream key.
pub fn site_key(coords: &[i64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3u64;
    for &c in coords {
        h = splitmix64(h ^ (c as u64));
    }
    h
}

/// Generator for `(seed, stream)`; the stream selects an independent ChaCha sequence.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
