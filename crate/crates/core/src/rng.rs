//! Seeded random numbers.
//!
//! The generator is SplitMix64: `state += 0x9E3779B97F4A7C15`, then
//! `z = state; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB; z ^ (z >> 31)`.
//! A uniform double in `[0,1)` is `(z >> 11) * 2^-53`. Sampling code draws
//! coordinates in order, so sequences are reproducible in any language.

use rand::RngCore;
use rand_xoshiro::SplitMix64;

#[derive(Clone, Debug)]
pub struct Rng(SplitMix64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(SplitMix64::from_seed_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0,1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`; returns `lo` when `lo == hi`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Point drawn coordinate by coordinate from the box `[low, high]`.
    pub fn point_in(&mut self, low: &[f64], high: &[f64]) -> Vec<f64> {
        low.iter()
            .zip(high)
            .map(|(l, h)| self.uniform_in(*l, *h))
            .collect()
    }
}

trait FromSeedU64 {
    fn from_seed_u64(seed: u64) -> Self;
}

impl FromSeedU64 for SplitMix64 {
    fn from_seed_u64(seed: u64) -> Self {
        use rand::SeedableRng;
        SplitMix64::from_seed(seed.to_le_bytes())
    }
}
