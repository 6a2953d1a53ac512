//! Seed derivation and seeded generators.
//!
//! Every stochastic step in the workbench draws from a ChaCha stream whose
//! seed is derived from a run seed and a path of integers (iteration, slot,
//! purpose tag). Derivation is a SplitMix64 fold so it is identical on every
//! platform and independent of how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used throughout the crate.
pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of integers into a new 64-bit seed.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p.wrapping_add(GOLDEN))))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, path: &[u64]) -> Rng {
    rng(derive(base, path))
}

/// Purpose tags used as the last path element so that streams for different
/// purposes never collide.
pub mod tag {
    pub const SCENE: u64 = 1;
    pub const LATENT: u64 = 2;
    pub const ANCHOR_NOISE: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const REPARAM: u64 = 5;
    pub const DEPTH_NOISE: u64 = 6;
    pub const INIT: u64 = 7;
    pub const CAE_DATA: u64 = 8;
    pub const CAE_SHUFFLE: u64 = 9;
    pub const CANDIDATES: u64 = 10;
}
