//! Seeded random streams.
//!
//! Every trajectory owns one ChaCha8 stream. Trial `t` of a run seeded with `s`
//! uses stream `t` of the generator keyed by `s`, so trials are independent and
//! their results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream 0 for `seed`.
pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for trial `trial` of a run keyed by `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}
