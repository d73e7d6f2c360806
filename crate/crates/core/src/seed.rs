//! Seed derivation tree.
//!
//! Every random draw in an experiment is seeded by `derive(master, path)`,
//! where `path` names the draw, e.g. `[trial, TRAIN]`. Each level is mixed
//! with splitmix64, so sibling streams are decorrelated and adding a new
//! stream never shifts existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TRAIN: u64 = 1;
pub const REFERENCE: u64 = 2;
pub const INIT: u64 = 3;
pub const SAMPLER: u64 = 4;
pub const SUBSAMPLE: u64 = 5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
