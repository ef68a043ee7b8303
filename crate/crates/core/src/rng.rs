//! Hashing and seed derivation.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] whose seed is
//! derived from one root seed and a purpose label, so subsystems can be
//! re-seeded independently without disturbing each other's streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FNV_OFFSET_BASIS: u64 = 14_695_981_039_346_656_037;
pub const FNV_PRIME: u64 = 1_099_511_628_211;

/// 64-bit FNV-1a over raw bytes.
///
/// ```
/// assert_eq!(nara::rng::fnv1a64(b""), 14695981039346656037);
/// assert_eq!(nara::rng::fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
/// ```
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET_BASIS;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Derive a child seed from a parent seed and a purpose label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut bytes = Vec::with_capacity(8 + label.len());
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(label.as_bytes());
    // splitmix64 finalizer to spread low-entropy inputs
    let mut z = fnv1a64(&bytes).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a label and a list of integer coordinates
/// (epoch, batch, window index, ...).
pub fn derive_seed_indexed(seed: u64, label: &str, idx: &[u64]) -> u64 {
    let mut s = derive_seed(seed, label);
    for &i in idx {
        s = derive_seed(s ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15), label);
    }
    s
}

pub fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label))
}

pub fn rng_indexed(seed: u64, label: &str, idx: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed_indexed(seed, label, idx))
}
