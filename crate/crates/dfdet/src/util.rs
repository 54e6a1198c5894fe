//! Seeding and hashing helpers shared across modules.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a 64-bit. Stable across platforms and runs; used for config hashes,
/// frozen-weight fingerprints and deriving per-purpose rng streams.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Independent deterministic rng stream for (seed, purpose).
///
/// Every stochastic component (shuffling, slerp sampling, augmentations,
/// weight init) draws from its own stream so enabling one does not shift
/// the randomness of another.
pub fn stream_rng(seed: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(purpose.as_bytes()))
}

/// Hex fingerprint of raw f64 slices, in order. Bit-exact: two parameter
/// sets hash equal iff every byte is equal.
pub fn fingerprint_f64(chunks: impl Iterator<Item = impl AsRef<[f64]>>) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for chunk in chunks {
        for v in chunk.as_ref() {
            for &b in &v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    format!("{h:016x}")
}
