use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

fn map(input: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = input.data().iter().map(|&v| f(v)).collect();
    Tensor::from_vec(input.shape(), data).expect("shape preserved")
}

fn zip_map(a: &Tensor, b: &Tensor, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return shape_err(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &g)| f(x, g)).collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn relu(input: &Tensor) -> Tensor {
    map(input, |v| v.max(0.0))
}

/// Passes the upstream gradient where the input was strictly positive.
///
/// The mask only depends on the sign, so the forward output works as
/// `input` just as well.
pub fn relu_backward(input: &Tensor, d_output: &Tensor) -> Result<Tensor> {
    zip_map(input, d_output, "relu_backward", |x, g| if x > 0.0 { g } else { 0.0 })
}

/// Largest double below one.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, saturating at the representable values nearest to 0
/// and 1 so the output stays strictly inside the open unit interval.
pub fn sigmoid(input: &Tensor) -> Tensor {
    map(input, |v| {
        let s = if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        };
        s.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP)
    })
}

pub fn sigmoid_backward(output: &Tensor, d_output: &Tensor) -> Result<Tensor> {
    zip_map(output, d_output, "sigmoid_backward", |y, g| g * y * (1.0 - y))
}

/// Softmax across the channel axis of an NCHW tensor.
pub fn softmax_channel(input: &Tensor) -> Result<Tensor> {
    let s = input.shape4()?;
    let plane = s.plane();
    let x = input.data();
    let mut out = input.clone();
    let od = out.data_mut();
    for b in 0..s.batch {
        let base = b * s.channels * plane;
        for p in 0..plane {
            let at = |k: usize| base + k * plane + p;
            let max = (0..s.channels).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for k in 0..s.channels {
                let e = (x[at(k)] - max).exp();
                od[at(k)] = e;
                sum += e;
            }
            for k in 0..s.channels {
                od[at(k)] /= sum;
            }
        }
    }
    Ok(out)
}

pub fn softmax_backward(output: &Tensor, d_output: &Tensor) -> Result<Tensor> {
    let s = output.shape4()?;
    if d_output.shape() != output.shape() {
        return shape_err(format!(
            "softmax_backward: {:?} vs {:?}",
            output.shape(),
            d_output.shape()
        ));
    }
    let plane = s.plane();
    let (y, g) = (output.data(), d_output.data());
    let mut d_input = output.clone();
    let di = d_input.data_mut();
    for b in 0..s.batch {
        let base = b * s.channels * plane;
        for p in 0..plane {
            let dot: f64 = (0..s.channels)
                .map(|k| y[base + k * plane + p] * g[base + k * plane + p])
                .sum();
            for k in 0..s.channels {
                let i = base + k * plane + p;
                di[i] = y[i] * (g[i] - dot);
            }
        }
    }
    Ok(d_input)
}
