//! Seeded RNG plumbing.
//!
//! All stochastic operations in this crate draw from explicitly seeded
//! ChaCha8 streams. Sub-streams (per tree, per fold, per epoch, per map
//! pixel) are derived from the base seed with a SplitMix64 mix, so results
//! do not depend on the order in which sub-streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name of the stream cipher backing all randomness, recorded in artifacts
/// that promise reproducibility.
pub const RNG_ALGORITHM: &str = "chacha8";

pub type SeededRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed for stream index `stream` of `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream.wrapping_add(0x243f_6a88_85a3_08d3)))
}

/// Construct the RNG for a given seed.
pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seeded Fisher-Yates shuffle of `0..n`, returned as an index permutation.
pub fn permutation(n: usize, rng: &mut SeededRng) -> Vec<usize> {
    use rand::Rng;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
