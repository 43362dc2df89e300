//! Seeded 64-bit linear congruential generator.
//!
//! State update `s <- s * 6364136223846793005 + 1442695040888963407 (mod 2^64)`
//! (Knuth's MMIX constants). A uniform double is the top 53 bits of the new
//! state times 2^-53. Seeding sets `s = seed ^ 0x9E3779B97F4A7C15` and
//! discards one step. Any language with wrapping u64 arithmetic reproduces
//! the same stream.

const MUL: u64 = 6364136223846793005;
const INC: u64 = 1442695040888963407;

#[derive(Debug, Clone)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub fn new(seed: u64) -> Self {
        let mut r = Lcg {
            state: seed ^ 0x9E37_79B9_7F4A_7C15,
        };
        r.next_u64();
        r
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(MUL).wrapping_add(INC);
        self.state
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). Uses the high bits, so small n is fine.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        ((self.next_u64() >> 32) * n) >> 32
    }

    pub fn int_range(&mut self, lo: i64, hi_inclusive: i64) -> i64 {
        lo + self.below((hi_inclusive - lo + 1) as u64) as i64
    }

    /// Independent child stream for sub-suites.
    pub fn fork(&mut self, tag: u64) -> Lcg {
        Lcg::new(self.next_u64() ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03))
    }
}
