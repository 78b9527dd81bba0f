//! Seed fan-out from one global seed.
//!
//! Each stage draws from its own stream: `derive_seed(global, stream)` runs
//! SplitMix64 on `global + stream · φ64` where `φ64 = 0x9E3779B97F4A7C15`.
//! Named streams hash their label with FNV-1a first.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(global: u64, stream: u64) -> u64 {
    splitmix64(global.wrapping_add(stream.wrapping_mul(GOLDEN_GAMMA)))
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed for a named stage, e.g. `derive_named(seed, "stage1/warmup")`.
pub fn derive_named(global: u64, label: &str) -> u64 {
    derive_seed(global, fnv1a(label))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
