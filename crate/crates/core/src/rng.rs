//! Seed-derived random streams.
//!
//! Every Monte-Carlo trial and every link draw owns its own ChaCha stream,
//! addressed by `(seed, stream)`, so results do not depend on the order in
//! which parallel workers run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Returns the random stream `stream` of the generator seeded with `seed`.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Packs a two-level index (e.g. iteration and link) into a stream id.
pub fn stream_id(major: u64, minor: u64) -> u64 {
    (major << 16) | (minor & 0xffff)
}
