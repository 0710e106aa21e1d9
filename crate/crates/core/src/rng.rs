//! Seeded random streams. Every consumer draws from its own ChaCha stream so
//! adding randomness in one place never perturbs another.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Subset = 1,
    Corruption = 2,
    Init = 3,
    Shuffle = 4,
    Dropout = 5,
    Synthetic = 6,
    NoiseProbe = 7,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    indexed_stream_rng(seed, stream, 0)
}

/// Independent stream per `(stream, index)`, e.g. one dropout stream per learner.
pub fn indexed_stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | index);
    rng
}
