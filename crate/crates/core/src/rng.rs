//! Counter-addressed random streams.
//!
//! Every random draw in the pipeline is addressed by `(seed, stream, counter)`
//! so that any iteration can be reproduced without replaying its predecessors.
//! Resuming from a checkpoint only needs the iteration counter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream identifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    WeightInit = 1,
    PhantomPaired = 10,
    PhantomUnpairedA = 11,
    PhantomUnpairedB = 12,
    ShuffleA = 20,
    ShuffleB = 21,
    ShufflePaired = 22,
    AugmentA = 30,
    AugmentB = 31,
    AugmentPaired = 32,
}

/// Generator for draw number `counter` of `stream`; each counter owns a
/// disjoint block of 2^32 keystream words.
pub fn stream_rng(seed: u64, stream: Stream, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng.set_word_pos((counter as u128) << 32);
    rng
}
