//! Deterministic seed derivation.
//!
//! Every random stream in a run is a `ChaCha8Rng` seeded from the master seed
//! through [`derive`], so results do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a stream tag and an index.
pub fn derive(master: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ tag) ^ index)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, tag: u64, index: u64) -> Rng {
    rng(derive(master, tag, index))
}

pub mod tags {
    pub const ENV_WORLD: u64 = 1;
    pub const ROLLOUT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const EXPERT_SAMPLE: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const DDPG: u64 = 7;
    pub const COLLECT: u64 = 8;
    pub const PROJECTION: u64 = 9;
}
