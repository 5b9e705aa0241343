//! Seed fan-out.
//!
//! A single user seed is expanded into decorrelated per-stream seeds with a
//! SplitMix64 finalizer keyed on `(seed, stream)`. Streams are plain counters,
//! so a component can derive per-item seeds (one per point, one per bit) without
//! sharing RNG state across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Concrete RNG used everywhere in the crate.
pub type Rng = ChaCha8Rng;

/// Named streams for the top-level pipeline.
pub mod stream {
    pub const SUPERVISION: u64 = 1;
    pub const CODE_INIT: u64 = 2;
    pub const SPECTRAL: u64 = 3;
    pub const ANCHORS: u64 = 4;
    pub const CLASSIFIER: u64 = 5;
    pub const DATA_GEN: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based seed splitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSplitter {
    base: u64,
}

impl SeedSplitter {
    pub fn new(base: u64) -> Self {
        Self { base }
    }

    /// Seed for `stream`. Distinct streams give unrelated seeds.
    pub fn derive(&self, stream: u64) -> u64 {
        splitmix64(splitmix64(self.base) ^ splitmix64(stream.wrapping_mul(0xD6E8_FEB8_6659_FD93)))
    }

    /// Child splitter rooted at `stream`.
    pub fn child(&self, stream: u64) -> SeedSplitter {
        SeedSplitter::new(self.derive(stream))
    }

    pub fn rng(&self, stream: u64) -> Rng {
        Rng::seed_from_u64(self.derive(stream))
    }
}

/// Shorthand for an RNG seeded from `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> Rng {
    SeedSplitter::new(seed).rng(stream)
}
