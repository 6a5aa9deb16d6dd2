//! Counter-keyed random streams.
//!
//! Every random draw in a simulation comes from a [`Stream`] keyed by
//! `(seed, purpose, epoch, node)`. Two streams with the same key produce the
//! same sequence regardless of how many other streams were consumed before,
//! so runs are reproducible and per-node work can be reordered freely.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Named purposes, hashed into the stream key.
pub mod purpose {
    pub const TASK: &str = "task";
    pub const INIT: &str = "init";
    pub const BATCH: &str = "batch";
    pub const NOISE: &str = "noise";
}

pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: u64, purpose: &str, epoch: u64, node: u64) -> Self {
        let mut key = mix64(seed ^ 0x9E37_79B9_7F4A_7C15);
        key = mix64(key ^ fnv1a64(purpose.as_bytes()));
        key = mix64(key ^ epoch.wrapping_mul(0xA076_1D64_78BD_642F));
        key = mix64(key ^ node.wrapping_mul(0xE703_7ED1_A0B4_28DB));
        Self {
            rng: ChaCha8Rng::seed_from_u64(key),
        }
    }

    /// Uniform sample in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform sample in `[lo, hi]`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
