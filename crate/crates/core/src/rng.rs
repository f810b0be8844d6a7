//! Seed fan-out. Every stage gets its own stream derived from the top-level
//! seed and a stable stage name, so adding a stage never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stage name.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    splitmix(seed ^ splitmix(fnv1a(stage.as_bytes())))
}

/// Derive a child seed from a parent seed and an index (partition, image, ...).
pub fn derive_indexed(seed: u64, index: u64) -> u64 {
    splitmix(seed ^ splitmix(index.wrapping_add(0x51_7cc1_b727_220a)))
}

pub fn stage_rng(seed: u64, stage: &str) -> StageRng {
    StageRng::seed_from_u64(derive_seed(seed, stage))
}

pub fn rng_from(seed: u64) -> StageRng {
    StageRng::seed_from_u64(seed)
}
