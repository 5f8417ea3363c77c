//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a master seed plus a small tag, so independent components never
//! share a stream and any stream can be re-created from its coordinates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a seed with a tag (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator positioned at a fixed block for `(seed, stream, index)`.
///
/// Each index owns 16 words of the keystream, plenty for the handful of
/// draws any single step needs.
pub fn stream_at(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 16);
    rng
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
