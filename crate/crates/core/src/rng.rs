//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by a 64-bit seed (expanded with
//! the generator's fixed PCG32 seed schedule) and a 64-bit stream id. ChaCha
//! is counter based, so a `(seed, stream)` pair yields the same sequence of
//! words on every platform, and distinct stream ids never overlap.
//!
//! Uniform reals take the top 53 bits of one `u64` word. Normal draws use
//! `rand_distr`'s ziggurat sampler.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Sub-stream ids used by the training harness. Keeping them fixed means
/// that e.g. evaluating more often never shifts the dropout masks.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const TRAIN_DATA: u64 = 2;
    pub const DEV_DATA: u64 = 3;
    pub const CORRUPTION: u64 = 4;
    pub const ORDER: u64 = 5;
    pub const DROPOUT: u64 = 6;
    pub const SELECTION: u64 = 7;
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    position: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngStream {
            seed,
            stream,
            position: 0,
            inner,
        }
    }

    /// An independent stream derived from the same seed.
    pub fn fork(&self, stream: u64) -> Self {
        Self::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of 32/64-bit words consumed so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.random_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.position += 1;
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.position += 1;
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.position += dst.len().div_ceil(4) as u64;
        self.inner.fill_bytes(dst)
    }
}
