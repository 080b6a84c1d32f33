//! Seedable, splittable pseudorandom streams.
//!
//! Every stochastic operation in the crate takes an explicit `&mut StreamRng`.
//! A stream is a ChaCha8 generator keyed by a 256-bit key; child streams are
//! derived from the parent key and a label with SHA-256, so a child does not
//! depend on how much of the parent has been consumed.
//!
//! Gaussian variates come from `rand_distr::StandardNormal` (ziggurat method).
//! A circularly-symmetric complex Gaussian `CN(0, v)` is drawn as independent
//! real and imaginary parts, each `N(0, v/2)`.

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct StreamRng {
    key: [u8; 32],
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"cdiff-stream");
        h.update(seed.to_le_bytes());
        Self::from_key(h.finalize().into())
    }

    fn from_key(key: [u8; 32]) -> Self {
        Self {
            key,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    /// Derives an independent child stream named by `label`.
    pub fn split(&self, label: u64) -> Self {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update(label.to_le_bytes());
        Self::from_key(h.finalize().into())
    }

    /// Like [`split`](Self::split) but named by a string, e.g. `"train"`.
    pub fn split_named(&self, name: &str) -> Self {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update(name.as_bytes());
        Self::from_key(h.finalize().into())
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }

    /// `CN(0, var)`.
    pub fn complex_normal(&mut self, var: f64) -> Complex64 {
        let s = (var / 2.0).sqrt();
        let re = self.normal();
        let im = self.normal();
        Complex64::new(s * re, s * im)
    }

    /// Uniform on `[lo, hi]`; returns `lo` when the interval is degenerate.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        self.inner.random_range(lo..=hi)
    }

    /// Uniform integer in `lo..=hi`.
    pub fn uniform_int(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    pub fn bit(&mut self) -> u8 {
        (self.inner.next_u32() & 1) as u8
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
