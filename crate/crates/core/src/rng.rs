//! Seed derivation. Every stochastic routine owns a generator seeded from
//! `(master seed, stream, index)` so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of indices into a child seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(seed: u64, path: &[u64]) -> Rng {
    rng(derive_seed(seed, path))
}

/// Named streams, so unrelated consumers of one master seed never collide.
pub mod stream {
    pub const CHANNEL: u64 = 1;
    pub const SYMBOLS: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const SNR: u64 = 4;
    pub const INIT: u64 = 5;
    pub const VALIDATION: u64 = 6;
    pub const TRAIN: u64 = 7;
    pub const SWEEP: u64 = 8;
    pub const BENCH: u64 = 9;
}
