//! Seed derivation. All randomness flows from one master seed through
//! named sub-streams so every pipeline stage is independently reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a over the label bytes; stable across platforms and builds.
fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derive a sub-seed from a master seed and a stream label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    // splitmix-style finalizer keeps nearby masters decorrelated
    let mut z = master ^ fnv1a(label);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic RNG for a named stream.
pub fn stream_rng(master: u64, label: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, label))
}

/// RNG for the i-th element of a named stream (per-trial, per-candidate...).
pub fn indexed_rng(master: u64, label: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, label).wrapping_add(index.wrapping_mul(0x9e3779b97f4a7c15)))
}
