//! Seeded random streams.
//!
//! A run owns one root seed. Every logical consumer (critic batches, noise,
//! parameter init, ...) derives its own stream from the root seed and a label,
//! so adding or skipping one consumer never shifts the draws seen by another.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::Matrix;

pub const RNG_ALGORITHM: &str = "chacha20";

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    label: String,
    inner: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::derive_from(seed, "")
    }

    /// Independent stream keyed by `(seed, label)`.
    pub fn derive_from(seed: u64, label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(RNG_ALGORITHM.as_bytes());
        hasher.update(seed.to_le_bytes());
        hasher.update(label.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        RngStream {
            seed,
            label: label.to_string(),
            inner: ChaCha20Rng::from_seed(key),
        }
    }

    /// Child stream sharing this stream's root seed.
    pub fn derive(&self, label: &str) -> Self {
        let full = if self.label.is_empty() {
            label.to_string()
        } else {
            format!("{}/{}", self.label, label)
        };
        Self::derive_from(self.seed, &full)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Number of 32-bit words consumed so far; with the seed and label this
    /// fully determines the stream state.
    pub fn position(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Rebuilds a stream at a recorded position.
    pub fn restore(seed: u64, label: &str, position: u128) -> Self {
        let mut s = Self::derive_from(seed, label);
        s.inner.set_word_pos(position);
        s
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| self.normal()).collect();
        Matrix::from_vec(rows, cols, data).expect("sized by construction")
    }

    pub fn uniform_matrix(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
        let data = (0..rows * cols).map(|_| self.uniform_range(lo, hi)).collect();
        Matrix::from_vec(rows, cols, data).expect("sized by construction")
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}
