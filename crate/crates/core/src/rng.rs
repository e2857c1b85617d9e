//! Seeded randomness with a fixed, portable algorithm.
//!
//! Everything that draws random numbers (splits, synthetic corpora, weight
//! init, batch shuffles) goes through [`SplitMix64`], so a given seed yields
//! the same plan, corpus and model on every platform and in any other
//! implementation that follows the same recipe:
//!
//! * `next_u64`: SplitMix64 (Steele, Lea & Flood), increment `0x9E3779B97F4A7C15`.
//! * `next_f64`: top 53 bits scaled by 2^-53, in `[0, 1)`.
//! * `below(n)`: rejection sampling on `next_u64` with threshold `(2^64 - n) mod n`, then `r mod n`.
//! * `shuffle`: Fisher-Yates from the last index down, `j = below(i + 1)`.
//! * `normal`: Box-Muller with `u1 = 1 - next_f64()`, `u2 = next_f64()`, cosine branch only.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 output function applied to one state word.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stage seed from a master seed and a stage tag.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    mix64(master ^ mix64(tag.wrapping_add(1).wrapping_mul(GOLDEN)))
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let r = self.next_u64();
            if r >= threshold {
                return r % n;
            }
        }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
