//! Seeded random streams.
//!
//! Every randomized computation draws from a ChaCha8 stream keyed by the
//! user seed and a stream index, so work can be split into chunks whose
//! results do not depend on how chunks are scheduled onto threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator keyed by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
