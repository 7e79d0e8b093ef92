//! Categorical cross-entropy over per-pixel class scores.
//!
//! Scores are clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]` and divided by their
//! per-pixel channel sum before the logarithm, which turns independent
//! sigmoid outputs into a categorical distribution. For softmax scores the
//! normalization is a no-op up to rounding.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub const CLAMP_EPS: f64 = 1e-7;

/// Returns the mean per-pixel loss and its gradient with respect to `pred`.
pub fn categorical_cross_entropy(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return shape_err(format!(
            "cross-entropy: pred {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        ));
    }
    let s = pred.shape4()?;
    let plane = s.plane();
    let pixels = (s.batch * plane) as f64;
    let (p, t) = (pred.data(), target.data());
    let mut grad = Tensor::zeros(pred.shape())?;
    let g = grad.data_mut();
    let mut total = 0.0;
    for b in 0..s.batch {
        let base = b * s.channels * plane;
        for px in 0..plane {
            let at = |k: usize| base + k * plane + px;
            let mut hot = 0.0;
            for k in 0..s.channels {
                let v = t[at(k)];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Validation(format!("target value {v} is not one-hot")));
                }
                hot += v;
            }
            if hot != 1.0 {
                return Err(Error::Validation(format!(
                    "target pixel {px} of item {b} has {hot} hot channels"
                )));
            }
            let sum: f64 = (0..s.channels)
                .map(|k| p[at(k)].clamp(CLAMP_EPS, 1.0 - CLAMP_EPS))
                .sum();
            for k in 0..s.channels {
                let raw = p[at(k)];
                let clamped = raw.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
                let tk = t[at(k)];
                if tk == 1.0 {
                    total -= (clamped / sum).ln();
                }
                // d/dp_k of -ln(p_hot / sum) = -t_k / p_k + 1 / sum, zero where clamped.
                let inside = (CLAMP_EPS..=1.0 - CLAMP_EPS).contains(&raw);
                g[at(k)] = if inside {
                    (1.0 / sum - tk / clamped) / pixels
                } else {
                    0.0
                };
            }
        }
    }
    Ok((total / pixels, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{encode_one_hot, LabelMask};
    use crate::layers::gradcheck::{grad_check, GradCheckLayer};

    fn target() -> Tensor {
        let m = LabelMask::new(2, 2, vec![0, 1, 2, 1]).unwrap();
        encode_one_hot(&[m]).unwrap()
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let t = target();
        let (loss, _) = categorical_cross_entropy(&t, &t).unwrap();
        assert!(loss <= 1e-6, "{loss}");
    }

    #[test]
    fn uniform_prediction_costs_ln3() {
        // Oracle: -ln(1/3) at every pixel.
        let pred = Tensor::fill(&[1, 3, 2, 2], 1.0 / 3.0).unwrap();
        let (loss, _) = categorical_cross_entropy(&pred, &target()).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!((loss - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_targets() {
        let pred = Tensor::fill(&[1, 3, 2, 2], 0.5).unwrap();
        assert!(matches!(
            categorical_cross_entropy(&pred, &Tensor::fill(&[1, 3, 2, 2], 0.5).unwrap()),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            categorical_cross_entropy(&pred, &Tensor::zeros(&[1, 3, 2, 2]).unwrap()),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            categorical_cross_entropy(&pred, &Tensor::zeros(&[1, 3, 2, 1]).unwrap()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            for layer in [
                GradCheckLayer::CrossEntropy,
                GradCheckLayer::SigmoidCrossEntropy,
                GradCheckLayer::SoftmaxCrossEntropy,
            ] {
                let err = grad_check(layer, &[1, 3, 4, 4], seed).unwrap();
                assert!(err < 1e-5, "{layer:?} seed {seed}: {err}");
            }
        }
    }
}
