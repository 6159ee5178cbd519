//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a master
//! seed and a short path of integers (policy index, sweep index, replication,
//! stream tag, ...). Re-running with the same master seed reproduces every
//! stream bit for bit, independent of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of indices into a new 64-bit seed.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0xA5A5_A5A5))))
}

pub fn rng(seed: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive(seed, path))
}

/// Stream tags used inside one episode.
pub mod stream {
    pub const TRAFFIC: u64 = 1;
    pub const FADING: u64 = 2;
    pub const MOBILITY: u64 = 3;
    pub const POLICY: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const TOPOLOGY: u64 = 6;
}
