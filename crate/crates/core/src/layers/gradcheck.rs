//! Central finite-difference verification of analytic gradients.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::init::{seeded_rng, uniform_tensor};
use crate::labels::{encode_one_hot, LabelMask, NUM_CLASSES};
use crate::layers::*;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `grads` against central differences of a scalar loss over
/// every element of every input, returning the worst relative error.
///
/// The loss is the sum of the tensor returned by `terms`, evaluated at
/// perturbed copies of `inputs`. Differences are taken term by term before
/// summing, so terms a perturbation does not touch cancel exactly instead
/// of contributing rounding noise. `grads[i]` must have the shape of
/// `inputs[i]`.
pub fn finite_difference_check<F>(inputs: &[Tensor], grads: &[Tensor], mut terms: F) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<Tensor>,
{
    if inputs.len() != grads.len() {
        return shape_err(format!("{} inputs but {} gradients", inputs.len(), grads.len()));
    }
    let mut probe = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for (i, grad) in grads.iter().enumerate() {
        if grad.shape() != inputs[i].shape() {
            return shape_err(format!(
                "gradient {i} has shape {:?}, input has {:?}",
                grad.shape(),
                inputs[i].shape()
            ));
        }
        for j in 0..grad.len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + FD_STEP;
            let up = terms(&probe)?;
            probe[i].data_mut()[j] = orig - FD_STEP;
            let down = terms(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = up.sub(&down)?.reduce_sum() / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
    }
    Ok(worst)
}

/// Layers and compositions covered by [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradCheckLayer {
    Conv2d,
    TransposedConv2,
    MaxPool2,
    Relu,
    Sigmoid,
    Softmax,
    /// Cross-entropy on scores drawn inside (0, 1).
    CrossEntropy,
    /// Logits through sigmoid into cross-entropy.
    SigmoidCrossEntropy,
    /// Logits through softmax into cross-entropy.
    SoftmaxCrossEntropy,
}

fn project(y: &Tensor, r: &Tensor) -> Result<Tensor> {
    y.mul(r)
}

fn scalar(v: f64) -> Result<Tensor> {
    Tensor::from_vec(&[1], vec![v])
}

fn random_target<R: Rng>(dims: &[usize], rng: &mut R) -> Result<Tensor> {
    let (b, h, w) = (dims[0], dims[2], dims[3]);
    let masks = (0..b)
        .map(|_| {
            let labels = (0..h * w).map(|_| rng.random_range(0..NUM_CLASSES as u8)).collect();
            LabelMask::new(w, h, labels)
        })
        .collect::<Result<Vec<_>>>()?;
    encode_one_hot(&masks)
}

/// Runs the finite-difference check for one layer on seeded random data.
///
/// `dims` is the NCHW input shape. Tensor-valued layers are reduced to a
/// scalar by a seeded random projection of their output. The cross-entropy
/// variants need three channels.
pub fn grad_check(layer: GradCheckLayer, dims: &[usize], seed: u64) -> Result<f64> {
    if dims.len() != 4 {
        return shape_err(format!("grad_check needs an NCHW shape, got {dims:?}"));
    }
    let mut rng = seeded_rng(seed);
    let x = uniform_tensor(dims, -1.0, 1.0, &mut rng)?;
    let channels = dims[1];
    match layer {
        GradCheckLayer::Conv2d => {
            let spec = ConvSpec::same(channels, 3, 3)?;
            let w = uniform_tensor(&spec.weight_shape(), -1.0, 1.0, &mut rng)?;
            let b = uniform_tensor(&[3], -1.0, 1.0, &mut rng)?;
            let y = conv2d_forward(&x, &w, &b, &spec)?;
            let r = uniform_tensor(y.shape(), -1.0, 1.0, &mut rng)?;
            let g = conv2d_backward(&x, &w, &spec, &r)?;
            finite_difference_check(&[x, w, b], &[g.d_input, g.d_weights.unwrap(), g.d_bias.unwrap()], |p| {
                project(&conv2d_forward(&p[0], &p[1], &p[2], &spec)?, &r)
            })
        }
        GradCheckLayer::TransposedConv2 => {
            let w = uniform_tensor(&[channels, 3, 2, 2], -1.0, 1.0, &mut rng)?;
            let b = uniform_tensor(&[3], -1.0, 1.0, &mut rng)?;
            let y = tconv2_forward(&x, &w, &b)?;
            let r = uniform_tensor(y.shape(), -1.0, 1.0, &mut rng)?;
            let g = tconv2_backward(&x, &w, &r)?;
            finite_difference_check(&[x, w, b], &[g.d_input, g.d_weights.unwrap(), g.d_bias.unwrap()], |p| {
                project(&tconv2_forward(&p[0], &p[1], &p[2])?, &r)
            })
        }
        GradCheckLayer::MaxPool2 => {
            let (y, idx) = maxpool2_forward(&x)?;
            let r = uniform_tensor(y.shape(), -1.0, 1.0, &mut rng)?;
            let d = maxpool2_backward(&idx, &r)?;
            finite_difference_check(&[x], &[d], |p| project(&maxpool2_forward(&p[0])?.0, &r))
        }
        GradCheckLayer::Relu => {
            // Keep inputs at least 0.1 away from the kink.
            let data = x.data().iter().map(|&v| v.signum() * (0.1 + 0.9 * v.abs())).collect();
            let x = Tensor::from_vec(dims, data)?;
            let r = uniform_tensor(dims, -1.0, 1.0, &mut rng)?;
            let d = relu_backward(&x, &r)?;
            finite_difference_check(&[x], &[d], |p| project(&relu(&p[0]), &r))
        }
        GradCheckLayer::Sigmoid => {
            let x = x.scale(3.0);
            let r = uniform_tensor(dims, -1.0, 1.0, &mut rng)?;
            let d = sigmoid_backward(&sigmoid(&x), &r)?;
            finite_difference_check(&[x], &[d], |p| project(&sigmoid(&p[0]), &r))
        }
        GradCheckLayer::Softmax => {
            let x = x.scale(3.0);
            let r = uniform_tensor(dims, -1.0, 1.0, &mut rng)?;
            let d = softmax_backward(&softmax_channel(&x)?, &r)?;
            finite_difference_check(&[x], &[d], |p| project(&softmax_channel(&p[0])?, &r))
        }
        GradCheckLayer::CrossEntropy => {
            let pred = uniform_tensor(dims, 0.05, 0.95, &mut rng)?;
            let target = random_target(dims, &mut rng)?;
            let (_, d) = categorical_cross_entropy(&pred, &target)?;
            finite_difference_check(&[pred], &[d], |p| scalar(categorical_cross_entropy(&p[0], &target)?.0))
        }
        GradCheckLayer::SigmoidCrossEntropy => {
            let x = x.scale(3.0);
            let target = random_target(dims, &mut rng)?;
            let y = sigmoid(&x);
            let (_, dy) = categorical_cross_entropy(&y, &target)?;
            let d = sigmoid_backward(&y, &dy)?;
            finite_difference_check(&[x], &[d], |p| {
                scalar(categorical_cross_entropy(&sigmoid(&p[0]), &target)?.0)
            })
        }
        GradCheckLayer::SoftmaxCrossEntropy => {
            let x = x.scale(3.0);
            let target = random_target(dims, &mut rng)?;
            let y = softmax_channel(&x)?;
            let (_, dy) = categorical_cross_entropy(&y, &target)?;
            let d = softmax_backward(&y, &dy)?;
            finite_difference_check(&[x], &[d], |p| {
                scalar(categorical_cross_entropy(&softmax_channel(&p[0])?, &target)?.0)
            })
        }
    }
}
