//! Seedable counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by
//! the run seed. Independent consumers get disjoint ChaCha streams: the
//! 64-bit stream id is a SplitMix64 hash of `(domain, a, b, c)`, where the
//! domain names the consumer (training rollouts, evaluation, dataset
//! shuffles, ...) and `a, b, c` are its coordinates, e.g.
//! `(step, group, response)` for training rollouts. A stream therefore
//! depends only on the seed and its coordinates, never on the order in
//! which streams are created, so parallel sampling reproduces serial runs.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Consumers of random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    TrainRollout = 1,
    EvalRollout = 2,
    DatasetShuffle = 3,
    DatasetGenerate = 4,
    TaskReward = 5,
    MonteCarlo = 6,
    PolicyInit = 7,
    Test = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream id for the given coordinates.
pub fn stream_id(domain: Domain, a: u64, b: u64, c: u64) -> u64 {
    let mut h = splitmix64(domain as u64);
    for x in [a, b, c] {
        h = splitmix64(h ^ x);
    }
    h
}

/// Random stream for `(seed, domain, a, b, c)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, domain: Domain, a: u64, b: u64, c: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id(domain, a, b, c));
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Lemire's widening multiply with rejection.
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        lo + self.below((hi - lo) as u64 + 1) as i64
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
