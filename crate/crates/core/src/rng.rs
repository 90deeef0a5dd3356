//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 streams keyed by a user seed and a fixed
//! stream id, so each consumer gets an independent, reproducible sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids for the consumers of a run-level seed.
pub mod stream {
    pub const SYNTH: u64 = 0;
    pub const SAMPLER: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const RANDOM_LABELLED: u64 = 3;
}

/// A ChaCha8 generator for `(seed, stream)`.
pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A generator for one `(seed, stream, counter)` triple, e.g. one training
/// session. The counter selects the word position, so distinct counters
/// never overlap within practical lengths.
pub fn seeded_at(seed: u64, stream: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = seeded(seed, stream);
    // 2^32 words per counter step
    rng.set_word_pos((counter as u128) << 32);
    rng
}
