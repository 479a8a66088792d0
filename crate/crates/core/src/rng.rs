//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a 64-bit seed and selected by a 64-bit stream id, so sample `i`
//! of a dataset (or trial `j` of a sweep cell) gets the same numbers no
//! matter which thread builds it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep sub-generators of one seed apart.
pub mod tag {
    pub const PATTERNS: u64 = 1;
    pub const SAMPLE: u64 = 2;
    pub const DATASET_ORDER: u64 = 3;
    pub const INIT_OUTPUT: u64 = 4;
    pub const INIT_HIDDEN: u64 = 5;
    pub const INIT_VALUE: u64 = 6;
    pub const INIT_KEY: u64 = 7;
    pub const INIT_QUERY: u64 = 8;
    pub const BATCHES: u64 = 9;
    pub const SPARSIFY: u64 = 10;
    pub const TRIAL: u64 = 11;
    pub const TRAIN_DATA: u64 = 12;
    pub const TEST_DATA: u64 = 13;
    pub const INIT: u64 = 14;
    pub const OUTLIERS: u64 = 15;
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(parent, tag, index)`.
pub fn derive_seed(parent: u64, tag: u64, index: u64) -> u64 {
    mix64(mix64(parent ^ mix64(tag)).wrapping_add(index))
}

/// Generator for stream `index` under `(seed, tag)`.
pub fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(tag)));
    rng.set_stream(index);
    rng
}
