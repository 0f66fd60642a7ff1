//! Seed derivation for independent random streams.
//!
//! Every consumer of randomness (rollouts, network init, sub-sampling) gets its
//! own ChaCha stream keyed by a tuple of integers, so adding draws in one place
//! never shifts another stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep the purposes apart even when the numeric keys collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Rollout = 1,
    Init = 2,
    Subsample = 3,
    Minibatch = 4,
    Evaluation = 5,
    Layout = 6,
    Reset = 7,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a sequence of keys into one 64-bit value.
pub fn derive_seed(seed: u64, stream: Stream, keys: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ ((stream as u64) << 56));
    for &k in keys {
        h = splitmix(h ^ splitmix(k));
    }
    h
}

pub fn stream(seed: u64, stream: Stream, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, keys))
}
