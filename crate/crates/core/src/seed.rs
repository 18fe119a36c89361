//! Deterministic seed derivation and content fingerprints.
//!
//! Every random decision in the crate draws from a ChaCha stream whose seed is
//! derived from a parent seed, a purpose tag and an index. Parallel workers
//! therefore never share a stream and results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::scalar::Real;

pub type Rng = ChaCha8Rng;

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Child seed = stable hash of `(parent, tag, indices)`.
pub fn derive_seed(parent: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut fp = Fingerprint::new("seed");
    fp.u64(parent).str(tag);
    for &i in indices {
        fp.u64(i);
    }
    fp.finish()
}

/// Draws one `N(0, 1)` variate in `T`.
#[inline]
pub fn standard_normal<T: Real>(rng: &mut Rng) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z)
}

/// Incremental 64-bit content hash (truncated SHA-256).
///
/// Values are fed in a fixed little-endian encoding so fingerprints agree
/// across platforms and between `f32`/`f64` builds of the same data.
#[derive(Clone)]
pub struct Fingerprint {
    hasher: Sha256,
}

impl Fingerprint {
    pub fn new(domain: &str) -> Self {
        let mut fp = Self {
            hasher: Sha256::new(),
        };
        fp.str(domain);
        fp
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.hasher.update(v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.hasher.update(v.to_bits().to_le_bytes());
        self
    }

    pub fn real<T: Real>(&mut self, v: T) -> &mut Self {
        self.f64(v.as_f64())
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.u64(s.len() as u64);
        self.hasher.update(s.as_bytes());
        self
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u64(b.len() as u64);
        self.hasher.update(b);
        self
    }

    pub fn finish(&self) -> u64 {
        let digest = self.hasher.clone().finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(head)
    }
}

pub fn hex(fp: u64) -> String {
    format!("{fp:016x}")
}
