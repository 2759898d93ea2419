//! Seeded pseudorandom streams.
//!
//! Every random draw in the crate goes through [`Rng`], a ChaCha8 generator
//! (as implemented by `rand_chacha`) keyed from a 64-bit seed. Independent
//! substreams are derived with [`Rng::split`], which selects a ChaCha stream
//! id, so e.g. epoch shuffles and dropout masks never share state.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh generator on stream `stream` of this generator's seed.
    ///
    /// The result depends only on `(seed, stream)`, not on how much of the
    /// parent stream has been consumed.
    pub fn split(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Rng {
            seed: self.seed,
            inner,
        }
    }

    /// Two-level split for (purpose, index) style derivations.
    pub fn derive(&self, purpose: u64, index: u64) -> Rng {
        let key = self.split(purpose).next_u64() ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Rng::new(key)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}
