//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream derived
//! from `(seed, purpose, index)`. Parallel work items each own their stream, so
//! results never depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream purposes. Distinct purposes never share a key.
pub mod purpose {
    pub const DESIGN: u64 = 1;
    pub const BETA: u64 = 2;
    pub const REPLICATE: u64 = 3;
    pub const FRONTIER: u64 = 4;
    pub const PROBE: u64 = 5;
    pub const RANDOM_CORRELATION: u64 = 6;
    pub const SUBSAMPLE: u64 = 7;
    pub const DATA: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed; used to nest streams (e.g. per-knot, then per-rep).
pub fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(purpose)).wrapping_add(index))
}

/// Independent stream number `index` for `purpose` under `seed`.
pub fn substream(seed: u64, purpose: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(purpose)));
    rng.set_stream(index);
    rng
}
