//! Counter-based seed derivation.
//!
//! Every random draw in a run comes from a stream keyed by
//! `(master seed, agent, concern, round)`, so the values an agent sees do not
//! depend on how agents are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Stream = ChaCha12Rng;

/// What a stream is used for. Distinct concerns never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Concern {
    Problem = 1,
    Graph = 2,
    Direction = 3,
    Init = 4,
    Bounds = 5,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, agent: u64, concern: Concern, round: u64) -> u64 {
    let mut h = splitmix64(master);
    for word in [agent, concern as u64, round] {
        h = splitmix64(h ^ word.wrapping_mul(GOLDEN));
    }
    h
}

pub fn stream(master: u64, agent: usize, concern: Concern, round: usize) -> Stream {
    Stream::seed_from_u64(derive_seed(master, agent as u64, concern, round as u64))
}
