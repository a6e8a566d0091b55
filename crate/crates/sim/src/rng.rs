//! Deterministic per-stream random number generators.
//!
//! Every random draw in the simulator comes from a generator keyed by
//! `(seed, client, round, purpose)`, so results do not depend on the order
//! in which parallel clients are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a generator is used for; keeps draws for different purposes independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Fresh = 1,
    Aging = 2,
    Training = 3,
    Test = 4,
    Layout = 5,
}

/// Client index reserved for the shared held-out test stream.
pub const TEST_CLIENT: u64 = u64::MAX;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, client: u64, round: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for part in [client, round, purpose as u64] {
        h = splitmix(h ^ part);
    }
    ChaCha8Rng::seed_from_u64(h)
}
