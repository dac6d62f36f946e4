//! Seedable random stream used for every stochastic decision in the crate.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood 2014) in its
//! counter form: the `i`-th output (1-based) is `mix(seed + i * GOLDEN)` with
//!
//! ```text
//! GOLDEN = 0x9E37_79B9_7F4A_7C15
//! mix(z) = z ^= z >> 30; z *= 0xBF58_476D_1CE4_E5B9;
//!          z ^= z >> 27; z *= 0x94D0_49BB_1331_11EB;
//!          z ^ (z >> 31)
//! ```
//!
//! All arithmetic is wrapping `u64`, so the sequence is identical on every
//! platform. Floats are drawn from the top 53 bits. Child streams are
//! obtained with [`RngStream::split`] or [`RngStream::derive`].

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, counter: 0 }
    }

    /// Deterministic stream keyed by a base seed and a list of labels.
    pub fn derive(seed: u64, labels: &[u64]) -> Self {
        let key = labels.iter().fold(mix(seed ^ GOLDEN), |acc, &l| {
            mix(acc.wrapping_add(GOLDEN) ^ l)
        });
        RngStream::new(key)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Child stream seeded from the next output of this one.
    pub fn split(&mut self) -> RngStream {
        RngStream::new(mix(self.next_u64() ^ 0x5851_F42D_4C95_7F2D))
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Unbiased integer in `[0, n)`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
