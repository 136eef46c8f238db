//! Deterministic stream splitting. Every random draw in a run comes from a
//! stream keyed by `(seed, purpose, indices...)`, so results do not depend on
//! thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, parts: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, parts))
}

/// Purpose tags for [`stream`].
pub mod purpose {
    pub const POOL: u64 = 1;
    pub const DRAW: u64 = 2;
    pub const ROLLOUT: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const BIAS: u64 = 5;
}
