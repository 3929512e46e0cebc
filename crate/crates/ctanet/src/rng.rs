//! Self-contained 64-bit PRNG used everywhere randomness is needed.
//!
//! SplitMix64 (Steele, Lea, Flood 2014). The generator is implemented here
//! rather than pulled from a crate so that dataset bytes and training traces
//! stay identical across platforms and dependency upgrades. All constants are
//! fixed by the algorithm:
//!
//! * state increment `0x9E3779B97F4A7C15` (2^64 / golden ratio)
//! * finalizer multipliers `0xBF58476D1CE4E5B9`, `0x94D049BB133111EB`
//! * finalizer shifts 30, 27, 31

/// Registry of substream tags. Every consumer of a user-facing seed derives
/// its generator through one of these, so no two consumers share a stream.
pub mod streams {
    /// Model parameter initialization.
    pub const INIT: u64 = 1;
    /// Per-video scene geometry (shared by a forward/reversed class pair).
    pub const GEOMETRY: u64 = 2;
    /// Per-frame pixel noise.
    pub const NOISE: u64 = 3;
    /// Train/val/test assignment.
    pub const SPLIT: u64 = 4;
    /// Minibatch order during training.
    pub const ORDER: u64 = 5;
    /// Frame permutation for shuffled evaluation.
    pub const SHUFFLE_EVAL: u64 = 6;
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

const GAMMA: u64 = 0x9E3779B97F4A7C15;

/// The SplitMix64 output finalizer: a bijective avalanche of a 64-bit word.
fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58476D1CE4E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Independent substream for (seed, stream id) pairs, e.g. one stream per
    /// video. The ids are mixed before combining so consecutive ids do not
    /// produce correlated streams.
    pub fn substream(seed: u64, stream: u64) -> Self {
        Self::substreams(seed, &[stream])
    }

    /// Independent substream for a path of stream ids, e.g. (video, frame).
    pub fn substreams(seed: u64, streams: &[u64]) -> Self {
        let mut state = seed;
        for &stream in streams {
            state = mix(state ^ mix(stream.wrapping_mul(GAMMA).wrapping_add(1)));
        }
        SplitMix64::new(state)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Uses rejection sampling so every value is
    /// exactly equally likely.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below requires n > 0");
        let zone = u64::MAX - (u64::MAX % n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return v % n;
            }
        }
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi, "range_inclusive requires lo <= hi");
        lo + self.next_below(hi - lo + 1)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}
