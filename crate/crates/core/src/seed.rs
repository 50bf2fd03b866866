//! Splittable seed derivation.
//!
//! Every random stream in the crate is keyed by a parent seed plus a short
//! path of integers (class id, SNR, record index, stream tag, ...). The rule
//! is SplitMix64 applied once per path element:
//!
//! ```text
//! state = parent
//! for each element e: state = splitmix64(state ^ splitmix64(e + GOLDEN))
//! ```
//!
//! so any implementation can reproduce a stream without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `parent` along `path`.
pub fn derive(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(parent, |state, &e| {
        splitmix64(state ^ splitmix64(e.wrapping_add(GOLDEN)))
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags, so unrelated consumers of the same parent never collide.
pub mod tag {
    pub const SYMBOLS: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const RANDOM_SELECT: u64 = 6;
    pub const GRAND: u64 = 7;
    pub const EVAL: u64 = 8;
    pub const FORGETTING: u64 = 9;
}
