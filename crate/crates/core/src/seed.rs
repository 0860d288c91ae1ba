//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a `u64`.
//! Child seeds are derived with the SplitMix64 finalizer applied to the parent
//! seed combined with a stream index, so independent runs, environments and
//! grid points never share a stream and results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of child stream `index` of `parent`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ index.wrapping_mul(GOLDEN))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shorthand for `rng(derive_seed(parent, index))`.
pub fn child_rng(parent: u64, index: u64) -> ChaCha8Rng {
    rng(derive_seed(parent, index))
}
