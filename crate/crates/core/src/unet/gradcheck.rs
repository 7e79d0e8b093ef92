//! End-to-end finite-difference check of the network gradients.

use rand::Rng;

use super::{backward, build, forward, predict, UNetConfig, UNetParams};
use crate::error::Result;
use crate::init::{seeded_rng, uniform_tensor};
use crate::labels::{encode_one_hot, LabelMask};
use crate::layers::{categorical_cross_entropy, relative_error, FD_STEP};
use crate::tensor::Tensor;

fn random_targets(n: usize, size: usize, seed: u64) -> Result<Tensor> {
    let mut rng = seeded_rng(seed);
    let masks: Vec<_> = (0..n)
        .map(|_| {
            let labels = (0..size * size).map(|_| rng.random_range(0..3u8)).collect();
            LabelMask::new(size, size, labels)
        })
        .collect::<Result<_>>()?;
    encode_one_hot(&masks)
}

/// Builds a network from `seed`, runs cross-entropy against a random target
/// and compares backpropagated gradients with central differences for
/// `samples` randomly chosen parameters. Returns the worst relative error.
pub fn grad_check_end_to_end(config: &UNetConfig, seed: u64, samples: usize) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let mut params = build(config, seed)?;
    // Zero biases put dead regions exactly on the ReLU kink, where central
    // differences measure half the slope. Move off it.
    for layer in params.layers_mut() {
        layer.bias = uniform_tensor(layer.bias.shape(), -0.1, 0.1, &mut rng)?;
    }
    let s = config.input_size;
    let x = uniform_tensor(&[1, 1, s, s], 0.0, 1.0, &mut rng)?;
    let target = random_targets(1, s, seed + 1000)?;
    let loss = |p: &UNetParams| -> Result<f64> { Ok(categorical_cross_entropy(&predict(p, config, &x)?, &target)?.0) };
    let (y, cache) = forward(&params, config, &x)?;
    let (_, d_scores) = categorical_cross_entropy(&y, &target)?;
    let grads = backward(&params, config, &cache, &d_scores)?;

    let sizes: Vec<usize> = params.tensors().map(Tensor::len).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let t = rng.random_range(0..sizes.len());
        let j = rng.random_range(0..sizes[t]);
        let mut probe = params.clone();
        let orig = params.tensors().nth(t).expect("sampled index").data()[j];
        probe.tensors_mut().nth(t).expect("sampled index").data_mut()[j] = orig + FD_STEP;
        let up = loss(&probe)?;
        probe.tensors_mut().nth(t).expect("sampled index").data_mut()[j] = orig - FD_STEP;
        let down = loss(&probe)?;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = grads.tensors().nth(t).expect("sampled index").data()[j];
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(worst)
}
