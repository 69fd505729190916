//! Seed derivation so that every tree, candidate set and sampler gets its
//! own generator regardless of the order work is scheduled in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of indices (stage, landmark, tree, ...).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(GOLDEN))))
}

pub fn seeded(base: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, path))
}

/// Stream tags keep generators for different purposes apart.
pub mod stream {
    pub const CANDIDATES: u64 = 0xCA;
    pub const TREE: u64 = 0x7E;
    pub const INITS: u64 = 0x1A;
    pub const KMEANS: u64 = 0xC1;
    pub const SELECT: u64 = 0x5E;
}
