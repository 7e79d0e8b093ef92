use crate::init::{seeded_rng, uniform_tensor};
use crate::tensor::Tensor;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    uniform_tensor(shape, -1.0, 1.0, &mut seeded_rng(seed)).unwrap()
}
