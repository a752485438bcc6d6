//! Portable pseudo-random numbers.
//!
//! Every random choice in the engine (k-means++ seeding, synthetic corpus
//! generation) flows through [`Xorshift64Star`], so a seed reproduces the same
//! output on any platform and in any language that follows the recipe below.
//!
//! Seeding: `state = splitmix64(seed)`, replaced by `0x9E37_79B9_7F4A_7C15`
//! if that yields zero.
//!
//! Step (Vigna's xorshift64*):
//!
//! ```text
//! x ^= x >> 12;
//! x ^= x << 25;
//! x ^= x >> 27;
//! state = x;
//! return x * 0x2545_F491_4F6C_DD1D   (wrapping)
//! ```
//!
//! Uniform doubles take the top 53 bits: `(next >> 11) * 2^-53`, giving a
//! value in `[0, 1)`.
//!
//! Independent sub-streams are derived with [`derive_seed`], a counter-based
//! split: `splitmix64(seed ^ splitmix64(stream + 1))`. Parallel workers derive
//! their own stream from `(seed, index)`, so results do not depend on
//! scheduling.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One round of SplitMix64 (Steele, Lea & Flood), used as a seed scrambler.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(1)))
}

/// FNV-1a hash of a label, for deriving streams from names.
pub fn label_stream(label: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01B3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct Xorshift64Star {
    state: u64,
}

impl Xorshift64Star {
    pub fn new(seed: u64) -> Self {
        let s = splitmix64(seed);
        Self {
            state: if s == 0 { GOLDEN } else { s },
        }
    }

    /// Generator for sub-stream `stream` of `seed`.
    pub fn derived(seed: u64, stream: u64) -> Self {
        Self::new(derive_seed(seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform index in `0..n`. `n` must be non-zero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Multiply-shift on the top 53 bits; bias is < 2^-40 for any realistic n.
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal deviate (Box-Muller, cosine branch only).
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
