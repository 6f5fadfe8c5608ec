//! Deterministic seeded PRNG used for all weight init and data generation.
//!
//! The generator is SplitMix64 (Steele, Lea, Flood 2014): state advances by
//! the golden-gamma constant and the output is a 64-bit finalizer mix. It is
//! tiny, fully specified here, and therefore reproducible bit-for-bit across
//! implementations and platforms:
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! output = z ^ (z >> 31)
//! ```
//!
//! Uniform doubles take the top 53 bits (`next_u64 >> 11`) scaled by 2^-53.
//! Normals use the Box-Muller transform on two uniforms.

use crate::mathx;

const GOLDEN_GAMMA: u64 = 0x9E3779B97F4A7C15;

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Uses rejection-free modulo; the bias is
    /// negligible for the small `n` used here but we document it anyway.
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller. One fresh pair per call; the second
    /// deviate is discarded so the stream position is input-independent.
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        mathx::sqrt(-2.0 * mathx::ln(u1)) * mathx::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Derive an independent stream for item `i` of a collection seeded by
    /// `seed`: seed_i = mix(seed, i). The mix runs the parent through one
    /// SplitMix64 output keyed by the index.
    pub fn derive(seed: u64, i: u64) -> u64 {
        let mut s = SplitMix64::new(seed ^ (i.wrapping_add(1)).wrapping_mul(GOLDEN_GAMMA));
        s.next_u64()
    }

    /// Fisher-Yates shuffle of indices 0..n.
    pub fn shuffled_indices(&mut self, n: usize) -> alloc::vec::Vec<usize> {
        let mut idx: alloc::vec::Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.next_below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}
