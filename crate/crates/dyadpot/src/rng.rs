//! Seeded shift-register generator used for all randomized sampling.
//!
//! The generator is SplitMix64: state advances by the odd constant
//! 0x9e3779b97f4a7c15 and the output is the finalizer
//! `z ^= z >> 30; z *= 0xbf58476d1ce4e5b9; z ^= z >> 27;
//!  z *= 0x94d049bb133111eb; z ^= z >> 31`.
//! It is trivially portable, so reruns (and ports to other languages)
//! reproduce every sampled quantity bit for bit.  Streams are splittable:
//! `split` derives an independent child stream from the parent state.

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, bound) by rejection; bound must be nonzero.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    /// Derive an independent child stream.
    pub fn split(&mut self) -> SplitMix64 {
        SplitMix64::new(self.next_u64() ^ 0x6a09_e667_f3bc_c909)
    }
}
