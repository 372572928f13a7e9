//! Seeded random streams.
//!
//! Every consumer of randomness (an oracle, a bootstrap loop, a single
//! Chernoff draw) owns a stream derived from a master seed and a path of
//! integer tags. Derivation is counter based, so the stream for tag path
//! `[cell, rep]` is the same whether or not any other stream was used.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// The generator used throughout the crate.
pub type StreamRng = Xoshiro256PlusPlus;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a tag path.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix64(seed.wrapping_add(GOLDEN)), |acc, &t| {
        mix64(acc ^ mix64(t.wrapping_add(GOLDEN).wrapping_mul(GOLDEN)))
    })
}

/// Generator for the stream identified by `seed` and `tags`.
pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, tags))
}

/// Stream tags used to keep oracle and procedure randomness disjoint.
pub mod tags {
    pub const ORACLE: u64 = 1;
    pub const PROCEDURE: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const CHERNOFF: u64 = 4;
    pub const MIXTURE: u64 = 5;
}
