//! Splittable random source.
//!
//! Every stochastic operation in this crate takes an explicit handle instead
//! of reaching for ambient randomness. The core generator is a counter-based
//! stream cipher, so a handle is cheap to fork: `substream` derives a child
//! deterministically from the root seed and a stream index (safe to hand out
//! across parallel work items in any order), while `split` draws a fresh
//! child seed from the parent. Results are bit-reproducible for a given seed
//! regardless of thread scheduling, as long as each work item uses its own
//! substream.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Deterministic random handle backed by ChaCha8.
#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

/// SplitMix64 finalizer; decorrelates derived seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn from_seed(seed: u64) -> Self {
        RandomSource {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Child handle indexed by `stream`. Children with distinct indices are
    /// decorrelated from each other and from the parent, and do not depend on
    /// how far the parent has advanced.
    pub fn substream(&self, stream: u64) -> Self {
        RandomSource::from_seed(mix(self.seed ^ mix(stream.wrapping_add(1))))
    }

    /// Child handle seeded from the parent's next draw (advances the parent).
    pub fn split(&mut self) -> Self {
        let seed = self.rng.next_u64();
        RandomSource::from_seed(seed)
    }

    /// Uniform draw from `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform draw from `(0, 1]`; safe where `1/t` appears.
    pub fn uniform_open(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is empty");
        self.rng.random_range(0..n)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Index draw proportional to nonnegative `weights` (not necessarily
    /// normalized). Panics on an empty, negative, non-finite, or all-zero
    /// weight vector: callers guarantee a valid distribution.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        assert!(!weights.is_empty(), "categorical over no outcomes");
        let mut total = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            assert!(
                w.is_finite() && w >= 0.0,
                "categorical weight {i} is {w}, want finite nonnegative"
            );
            total += w;
        }
        assert!(total > 0.0, "categorical weights sum to zero");
        let target = self.uniform() * total;
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                last_positive = i;
                acc += w;
                if target < acc {
                    return i;
                }
            }
        }
        // Float round-off can leave `target` marginally above the final
        // cumulative sum; the last positive-weight outcome is the owner.
        last_positive
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            out.swap(i, j);
        }
        out
    }
}
