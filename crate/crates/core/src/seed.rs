//! Seed derivation.
//!
//! Every stochastic component draws from a ChaCha8 stream whose seed is
//! derived from a parent seed and a role tag:
//!
//! ```text
//! derived = splitmix64(parent ^ splitmix64(fnv1a64(tag)))
//! ```
//!
//! Numeric sub-keys (sample ids, epoch numbers, trial indices) go through
//! [`derive_indexed`], which folds the index in with a second splitmix round.
//! The mapping is fixed so that noise realizations, initializations and
//! augmentation streams can be reproduced from a master seed alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed for a named role.
pub fn derive(parent: u64, tag: &str) -> u64 {
    splitmix64(parent ^ splitmix64(fnv1a64(tag.as_bytes())))
}

/// Derive a child seed for a named role and a numeric key.
pub fn derive_indexed(parent: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive(parent, tag) ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(parent: u64, tag: &str) -> ChaCha8Rng {
    rng(derive(parent, tag))
}
