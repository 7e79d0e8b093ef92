//! Adam with bias-corrected moment estimates.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;
use crate::unet::UNetParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.epsilon.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

/// First and second moment per parameter tensor, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &UNetParams, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .tensors()
                .map(|p| Tensor::zeros(p.shape()).expect("valid shape"))
                .collect::<Vec<_>>()
        };
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut UNetParams, grads: &UNetParams) -> Result<()> {
        let n = params.tensors().count();
        if grads.tensors().count() != n || self.m.len() != n {
            return shape_err(format!(
                "Adam step over {n} params, {} grads, {} moments",
                grads.tensors().count(),
                self.m.len()
            ));
        }
        for ((p, g), m) in params.tensors().zip(grads.tensors()).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return shape_err(format!(
                    "Adam shapes differ: param {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                ));
            }
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let tensors = params.tensors_mut().zip(grads.tensors());
        for ((p, g), (m, v)) in tensors.zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let p = p.data_mut();
            let (m, v) = (m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
