//! Deterministic derivation of independent RNG streams from a master seed.
//!
//! Every parallel job draws from a stream keyed by `(master, job index,
//! purpose)` so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(master: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, parts))
}

/// Purpose tags mixed into derived seeds.
pub mod purpose {
    pub const SAMPLE: u64 = 1;
    pub const ICA_INIT: u64 = 2;
    pub const PAIRS: u64 = 3;
    pub const BOOTSTRAP: u64 = 4;
    pub const PERMUTATION: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const RANDOM_BANK: u64 = 7;
}
