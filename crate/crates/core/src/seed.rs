//! Deterministic derivation of child seeds, so that every random stream
//! (per stimulus, per epoch, per task instance) depends only on the base
//! seed and its own coordinates, never on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `base` with each coordinate of `path` in turn.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn derived_rng(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

/// Stream labels, so that e.g. epoch 3 and stimulus 3 never share a seed.
pub(crate) mod stream {
    pub const STIMULUS: u64 = 1;
    pub const FORWARD_MODEL: u64 = 2;
    pub const TRIAL_NOISE: u64 = 3;
    pub const SUBSAMPLE: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const EPOCH: u64 = 6;
    pub const TASK: u64 = 7;
}
