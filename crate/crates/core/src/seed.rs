//! Stable seed derivation.
//!
//! Seeds are derived by hashing a tagged byte encoding with SHA-256 so that
//! they are identical across platforms, compiler versions and runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Clone)]
pub struct SeedBuilder {
    hasher: Sha256,
}

impl SeedBuilder {
    pub fn new(base: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"tabimpute-seed-v1");
        hasher.update(base.to_le_bytes());
        SeedBuilder { hasher }
    }

    pub fn str(mut self, s: &str) -> Self {
        self.hasher.update((s.len() as u64).to_le_bytes());
        self.hasher.update(s.as_bytes());
        self
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.hasher.update(v.to_le_bytes());
        self
    }

    pub fn f64(mut self, v: f64) -> Self {
        self.hasher.update(v.to_bits().to_le_bytes());
        self
    }

    pub fn finish(self) -> u64 {
        let digest = self.hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }
}

/// Shorthand for a seed derived from a base seed and a string tag.
pub fn derive(base: u64, tag: &str) -> u64 {
    SeedBuilder::new(base).str(tag).finish()
}

pub fn derive_indexed(base: u64, tag: &str, index: u64) -> u64 {
    SeedBuilder::new(base).str(tag).u64(index).finish()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
