//! Seed handling.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] created by
//! [`derive`]. A child seed is `splitmix64(root ^ splitmix64(label))`, so
//! components that use distinct labels get statistically independent
//! streams from one root seed, and the streams do not depend on the order in
//! which components are constructed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream labels used by the training pipeline.
pub mod component {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const PRETRAIN: u64 = 3;
    pub const ROLLOUT: u64 = 4;
    pub const DISCRIMINATOR: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const REPLAY: u64 = 7;
    pub const PROBE: u64 = 8;
    pub const VERIFY: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn child_seed(root: u64, label: u64) -> u64 {
    splitmix64(root ^ splitmix64(label))
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for `label` under `root`.
pub fn derive(root: u64, label: u64) -> Rng {
    seeded(child_seed(root, label))
}

/// RNG for `(label, index)` under `root`, e.g. one stream per epoch or worker.
pub fn derive_indexed(root: u64, label: u64, index: u64) -> Rng {
    seeded(child_seed(child_seed(root, label), index))
}
