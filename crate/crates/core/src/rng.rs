//! Deterministic random streams.
//!
//! Every source of randomness in the crate is derived from one root seed
//! through named substreams, so changing e.g. the trigger count never
//! perturbs encoder initialization. Derivation uses FNV-1a over the label
//! plus a splitmix finalizer; both are fixed, platform-independent maps.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Substream labels used across the crate.
pub mod stream {
    pub const DATASET: &str = "dataset";
    pub const TRIGGER: &str = "trigger";
    pub const INIT: &str = "init";
    pub const PRETEXT: &str = "pretext";
    pub const TRAIN: &str = "train";
    pub const NEGATIVES: &str = "negatives";
    pub const SPLIT: &str = "split";
    pub const DOWNSTREAM: &str = "downstream";
    pub const VERIFY: &str = "verify";
    pub const SWEEP: &str = "sweep";
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed of a named substream from a root seed.
pub fn substream_seed(root: u64, label: &str) -> u64 {
    splitmix64(root ^ fnv1a64(label.as_bytes()))
}

/// Derive an indexed substream seed (e.g. per-epoch resampling).
pub fn indexed_seed(root: u64, label: &str, index: u64) -> u64 {
    splitmix64(substream_seed(root, label) ^ splitmix64(index))
}

/// RNG for a named substream of the root seed.
pub fn substream(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(root, label))
}

/// RNG for an indexed substream (label + index).
pub fn indexed_substream(root: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(indexed_seed(root, label, index))
}
