//! Deterministic seed derivation.
//!
//! Every random consumer in the pipeline (split, subsampling, k-means init,
//! CV folds, the synthetic generator) draws its RNG from a master seed mixed
//! with a fixed role tag and an optional index. Changing one consumer's
//! randomness therefore never perturbs another's.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    let mut h = state;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// SplitMix64 finalizer; spreads low-entropy inputs over the full 64 bits.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a 64-bit seed from `(master, role, index)`.
pub fn derive_seed(master: u64, role: &str, index: u64) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &master.to_le_bytes());
    h = fnv1a(h, role.as_bytes());
    h = fnv1a(h, &index.to_le_bytes());
    mix(h)
}

/// Counter-based RNG for the given `(master, role, index)` triple.
pub fn derive_rng(master: u64, role: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, role, index))
}
