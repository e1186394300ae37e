//! Seed derivation.
//!
//! Every random stream in the library is a ChaCha8 generator keyed by a 64-bit
//! seed and a 64-bit stream id. Seeds for sub-tasks (experiment cells,
//! repetitions, bootstrap replicates) are derived with [`mix`], a SplitMix64
//! fold, so any single cell can be replayed from `(base_seed, grid_index,
//! repetition)` alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of words into one seed: `h = splitmix64(h ^ w)` for each word,
/// starting from `h = 0`.
pub fn mix(words: &[u64]) -> u64 {
    words.iter().fold(0u64, |h, &w| splitmix64(h ^ w))
}

/// Generator for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
