//! Seed tree for reproducible stochastic draws.
//!
//! Every random draw in a run is keyed by `(master, t, k, i, tag)`. The key is
//! mixed into a 64-bit seed with SplitMix64 finalizers, so the value of a draw
//! never depends on which thread computes it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags separating independent uses of the same `(t, k, i)` coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    Batch = 1,
    Refresh = 2,
    Current = 3,
    Previous = 4,
    Replicate = 5,
    Synthetic = 6,
    ChainStep = 7,
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash an ordered list of words into a seed.
pub fn hash_words(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &w| mix(acc ^ mix(w)))
}

/// Seed for the draw at coordinates `(t, k, i)` of stream `tag`.
pub fn derive_seed(master: u64, t: u64, k: u64, i: u64, tag: StreamTag) -> u64 {
    hash_words(&[master, t, k, i, tag as u64])
}

/// Deterministic generator for a seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
