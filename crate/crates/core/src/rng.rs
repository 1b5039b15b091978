//! Seeded random streams.
//!
//! Every randomized step takes an explicit master seed. Independent steps draw
//! from distinct ChaCha streams so that adding a step never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Deterministic generator used throughout the crate.
pub type StreamRng = ChaCha12Rng;

/// Well-known stream identifiers. Values are part of the reproducibility
/// contract; do not renumber.
pub mod stream {
    pub const BLOCK_SIDES: u64 = 1;
    pub const BLOCK_TOKENS: u64 = 2;
    pub const CATCH: u64 = 3;
    pub const PRACTICE: u64 = 4;
    pub const SESSION_ORDER: u64 = 5;
    pub const MIX_OFFSET: u64 = 6;
    pub const NOISE: u64 = 7;
    pub const DIGITS: u64 = 8;
    pub const LISTENER: u64 = 9;
}

/// Generator for `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed, e.g. one per simulated listener.
pub fn split_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
