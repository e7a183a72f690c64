//! Seed derivation for reproducible, independently re-runnable random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by a base seed
//! and a fixed label, so a component can be replayed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derive a child seed from `base`, a stream label and an index.
pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ fnv1a(label)).wrapping_add(splitmix64(index)))
}

pub fn stream(base: u64, label: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, label, index))
}

pub fn from_seed(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}
