//! Counter-based seed streams.
//!
//! Every random draw in the crate comes from a generator seeded by
//! `derive_seed(root, path)`, so outputs depend only on the root seed and
//! the indices of the task, never on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a root seed with a path of stream indices.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(root: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(root, path))
}

/// Stream tags keep unrelated uses of one root seed apart.
pub mod tag {
    pub const LHS: u64 = 1;
    pub const FIELD: u64 = 2;
    pub const PERMUTATION: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const GODAMBE: u64 = 6;
    pub const EVAL: u64 = 7;
}
