//! Seedable random source.
//!
//! Backed by ChaCha8: the key is expanded from the 64-bit seed and each
//! logical stream uses a distinct ChaCha stream id, so split streams never
//! overlap and the output is identical on every platform.

use rand::seq::{index, SliceRandom};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::stream(seed, 0)
    }

    /// Independent stream `id` derived from `seed`.
    pub fn stream(seed: u64, id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(id);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.inner.get_stream()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Matrix of i.i.d. normal samples.
    pub fn gaussian(&mut self, mean: f64, std: f64, rows: usize, cols: usize) -> Result<Matrix<f32>> {
        if !(std >= 0.0) {
            return Err(Error::InvalidArgument(format!("normal std must be >= 0, got {std}")));
        }
        let data = (0..rows * cols)
            .map(|_| (mean + std * self.standard_normal()) as f32)
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `k` distinct indices from `0..n`, in random order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        index::sample(&mut self.inner, n, k).into_vec()
    }
}
