//! Seeded pseudo-random source shared by every stochastic step.
//!
//! The generator is xoshiro256++ with its 256-bit state expanded from a
//! 64-bit seed by splitmix64. Normal deviates use the cosine branch of the
//! Box–Muller transform, consuming exactly two uniforms per draw, so the
//! state never holds a cached spare.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::DenseTensor;

#[derive(Debug, Clone)]
pub struct Rng {
    inner: Xoshiro256PlusPlus,
}

/// splitmix64 output function.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn seed_from(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Independent generator for `(master seed, stream id)`.
    pub fn derive(master: u64, stream: u64) -> Self {
        Self::seed_from(derive_seed(master, stream))
    }

    /// Child generator keyed by `stream`, leaving `self` untouched.
    pub fn fork(&self, stream: u64) -> Self {
        let mut probe = self.inner.clone();
        Self::derive(probe.next_u64(), stream)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)` by Lemire's multiply-shift with rejection.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

pub fn derive_seed(master: u64, stream: u64) -> u64 {
    mix64(mix64(master) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Tensor of i.i.d. standard normal draws.
pub fn rng_normal(rng: &mut Rng, shape: &[usize]) -> DenseTensor {
    let mut out = DenseTensor::zeros(shape);
    for v in out.data_mut() {
        *v = rng.normal() as f32;
    }
    out
}
