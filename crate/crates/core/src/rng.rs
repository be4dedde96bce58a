//! Seed derivation. Every random stream in a run is a ChaCha8 generator
//! keyed from `(run seed, stream tag, index)`, so streams are independent
//! of each other and of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags.
pub mod stream {
    pub const PLACEMENT: u64 = 1;
    pub const TRAFFIC: u64 = 2;
    pub const MOBILITY: u64 = 3;
    pub const AGENT_INIT: u64 = 4;
    pub const AGENT_POLICY: u64 = 5;
    pub const AGENT_REPLAY: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ tag) ^ index)
}

pub fn stream_rng(base: u64, tag: u64, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, tag, index))
}
