//! Deterministic random source. All sampling in the crate goes through
//! this wrapper so a fixed seed reproduces runs bit for bit.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.gen_range(lo..hi)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        Normal::new(mean, std).expect("std must be finite").sample(&mut self.0)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.0.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        xs.shuffle(&mut self.0);
    }

    /// Child generator with an independent stream, for reproducible
    /// per-component seeding.
    pub fn fork(&mut self, stream: u64) -> Rng {
        let seed = self.0.gen::<u64>() ^ stream.wrapping_mul(0x9e3779b97f4a7c15);
        Rng::seeded(seed)
    }
}
