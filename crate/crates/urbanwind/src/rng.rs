//! Named deterministic RNG streams.
//!
//! Every stochastic component (weight init, dropout, shuffling, scene
//! generation, search trials) draws from its own stream derived from a base
//! seed and a label, so streams never interfere and runs replay exactly.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the label and indices; only used to spread seeds, not for
/// security.
fn mix(seed: u64, label: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut step = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for b in seed.to_le_bytes() {
        step(b);
    }
    for b in label.bytes() {
        step(b);
    }
    for b in index.to_le_bytes() {
        step(b);
    }
    h
}

/// Deterministic stream named by `(seed, label, index)`.
pub fn stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, label, index))
}

/// Derived sub-seed, for components that keep a `u64` rather than a stream.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    mix(seed, label, index)
}
