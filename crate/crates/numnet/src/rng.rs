//! Seeded deterministic random number streams.
//!
//! Every stochastic choice in the crate (parameter initialization, epoch
//! shuffling, sampled gradient checks, synthetic corpus generation) draws
//! from a ChaCha8 stream derived from a single 64-bit seed plus a stream
//! label. Labeled sub-streams keep the consumers independent: advancing the
//! shuffle stream never perturbs initialization, and a training run resumed
//! at epoch k replays exactly the epoch-k shuffle.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// 64-bit FNV-1a hash. Used for stream labels, the hashing vocabulary and
/// configuration fingerprints.
pub fn hash64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A deterministic random stream: ChaCha8 keyed by `(seed, label, index)`.
///
/// The default seed used across the crate is 42.
pub struct RngStream {
    inner: ChaCha8Rng,
}

pub const DEFAULT_SEED: u64 = 42;

impl RngStream {
    /// Derive the sub-stream for `label` (e.g. "init", "shuffle") at `index`
    /// (e.g. the epoch number; 0 when unused).
    pub fn new(seed: u64, label: &str, index: u64) -> Self {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&hash64(label.as_bytes()).to_le_bytes());
        key[16..24].copy_from_slice(&index.to_le_bytes());
        key[24..32].copy_from_slice(&hash64(b"numnet.stream.v1").to_le_bytes());
        RngStream {
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `[0, n)` via rejection sampling (no modulo bias).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is undefined");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Uniform integer in `[lo, hi]` inclusive.
    pub fn range(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi);
        lo + self.below((hi - lo + 1) as usize) as i64
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Sample `k` distinct indices from `0..n` in ascending order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        if k >= n {
            return (0..n).collect();
        }
        let mut all: Vec<usize> = (0..n).collect();
        self.shuffle(&mut all);
        let mut picked: Vec<usize> = all.into_iter().take(k).collect();
        picked.sort_unstable();
        picked
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<u64> = (0..8).map(|_| RngStream::new(42, "init", 0).next_u64()).collect();
        let b: Vec<u64> = (0..8).map(|_| RngStream::new(42, "init", 0).next_u64()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn labels_separate_streams() {
        let x = RngStream::new(42, "init", 0).next_u64();
        let y = RngStream::new(42, "shuffle", 0).next_u64();
        let z = RngStream::new(42, "shuffle", 1).next_u64();
        assert_ne!(x, y);
        assert_ne!(y, z);
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = RngStream::new(7, "test", 0);
        for _ in 0..1000 {
            assert!(rng.below(13) < 13);
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut v: Vec<usize> = (0..50).collect();
        RngStream::new(3, "test", 0).shuffle(&mut v);
        let mut s = v.clone();
        s.sort_unstable();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn sample_indices_distinct_sorted() {
        let mut rng = RngStream::new(9, "test", 0);
        let s = rng.sample_indices(100, 10);
        assert_eq!(s.len(), 10);
        for w in s.windows(2) {
            assert!(w[0] < w[1]);
        }
    }
}
