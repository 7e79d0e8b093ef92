//! Seeded random tensors. Every stochastic step in the crate draws from
//! ChaCha8 so that results are reproducible across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_tensor<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

pub fn normal_tensor<R: Rng>(shape: &[usize], std_dev: f64, rng: &mut R) -> Result<Tensor> {
    let dist = Normal::new(0.0, std_dev).map_err(|e| Error::Argument(e.to_string()))?;
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect())
}
