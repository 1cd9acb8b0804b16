//! Hierarchical seed derivation.
//!
//! A single master seed fans out into named substreams. Each stream is a
//! 32-byte key; children are derived by hashing the parent key with a label
//! and a counter, so any substream can be reconstructed without touching its
//! siblings. Generators are ChaCha20 seeded from the key.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct RngStream {
    key: [u8; 32],
}

impl RngStream {
    pub fn root(master_seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"fedact/root");
        hasher.update(master_seed.to_le_bytes());
        Self {
            key: hasher.finalize().into(),
        }
    }

    /// Derive the `index`-th child stream under `label`.
    pub fn child(&self, label: &str, index: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(self.key);
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        hasher.update(index.to_le_bytes());
        Self {
            key: hasher.finalize().into(),
        }
    }

    pub fn named(&self, label: &str) -> Self {
        self.child(label, 0)
    }

    pub fn rng(&self) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(self.key)
    }
}

/// Named top-level substreams.
pub mod streams {
    pub const GEOMETRY: &str = "geometry";
    pub const SHADOWING: &str = "shadowing";
    pub const PILOTS: &str = "pilots";
    pub const ACTIVITY: &str = "activity";
    pub const CHANNELS: &str = "channels";
    pub const NOISE: &str = "noise";
    pub const MODEL_INIT: &str = "model-init";
    pub const TRAINING: &str = "training";
    pub const HELDOUT: &str = "heldout";
    pub const LOCAL: &str = "local";
    pub const EVAL: &str = "eval";
}

/// Circularly-symmetric complex Gaussian with unit variance, CN(0, 1).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}
