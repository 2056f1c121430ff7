//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vfae_core::tensor::Tensor;

/// Gaussian cloud centered at `center`.
pub fn cloud(n: usize, dim: usize, center: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(
        n,
        dim,
        (0..n * dim)
            .map(|_| center + rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

/// Binary design matrix plus s labels for training-step benchmarks.
pub fn binary_batch(n: usize, dim: usize, seed: u64) -> (Tensor, Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::matrix(
        n,
        dim,
        (0..n * dim).map(|_| (rng.random::<f64>() < 0.5) as u8 as f64).collect(),
    );
    let s = (0..n).map(|i| i % 2).collect();
    let y = (0..n).map(|_| rng.random_range(0..2)).collect();
    (x, s, y)
}
