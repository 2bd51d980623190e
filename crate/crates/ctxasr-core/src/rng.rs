//! Seeded random number generation.
//!
//! All randomness in the crate flows through [`Rng`], a thin wrapper around
//! ChaCha8 so that every training run, corpus synthesis, and perturbation
//! draw is reproducible from a single `u64` seed across platforms.

use rand_core::{RngCore, SeedableRng};

#[derive(Clone, Debug)]
pub struct Rng(rand_chacha::ChaCha8Rng);

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        Rng(rand_chacha::ChaCha8Rng::seed_from_u64(seed))
    }

    /// Derive an independent stream for a sub-task (epoch, document, ...).
    pub fn fork(&self, stream: u64) -> Self {
        let mut child = self.0.clone();
        child.set_stream(stream);
        Rng(child)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // widening multiply keeps the bias negligible for desk-scale n
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Standard normal via Box-Muller. One value per call; no caching, so
    /// the draw sequence is a pure function of the call sequence.
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.uniform();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
