//! Deterministic fixture generator.
//!
//! The generator is xorshift64* (Vigna, 2016):
//!
//! ```text
//! x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27;
//! out = x * 0x2545_F491_4F6C_DD1D   (wrapping, 64-bit)
//! ```
//!
//! A zero seed is replaced by `0x9E37_79B9_7F4A_7C15` because zero is a fixed
//! point of the recurrence. Weights take the top 24 bits of each output,
//! `w = (out >> 40) / 2^24 − 0.5`, which is exact in `f32` and lies in
//! `[−0.5, 0.5)` on every platform.

pub const MULTIPLIER: u64 = 0x2545_F491_4F6C_DD1D;
pub const ZERO_SEED_REPLACEMENT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        let state = if seed == 0 {
            ZERO_SEED_REPLACEMENT
        } else {
            seed
        };
        Self { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(MULTIPLIER)
    }

    /// Uniform in `[−0.5, 0.5)`, exactly representable.
    pub fn next_weight(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 / (1u32 << 24) as f32 - 0.5
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }
}
