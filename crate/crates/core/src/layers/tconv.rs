//! Transposed convolution with a 2x2 kernel and stride 2.
//!
//! Each input pixel expands into its own 2x2 output block, so the output is
//! exactly twice the input in both spatial dimensions and blocks never
//! overlap. Weights are laid out `[in_channels, out_channels, 2, 2]`.

use crate::error::{shape_err, Result};
use crate::layers::conv::gemm;
use crate::layers::LayerGrad;
use crate::tensor::{Shape4, Tensor};

fn check(input: &Tensor, weights: &Tensor) -> Result<(Shape4, Shape4)> {
    let s = input.shape4()?;
    match weights.shape() {
        &[c, o, 2, 2] if c == s.channels => Ok((s, Shape4::new(s.batch, o, 2 * s.height, 2 * s.width)?)),
        other => shape_err(format!(
            "transposed conv weights {other:?} do not fit input {:?}",
            s.dims()
        )),
    }
}

pub fn tconv2_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (s, os) = check(input, weights)?;
    if bias.shape() != [os.channels] {
        return shape_err(format!(
            "transposed conv bias {:?}, expected [{}]",
            bias.shape(),
            os.channels
        ));
    }
    let taps = os.channels * 4;
    let plane = s.plane();
    let mut expanded = vec![0.0; taps * plane];
    let mut out = Tensor::zeros4(os);
    let od = out.data_mut();
    for n in 0..s.batch {
        // (taps x plane) = W^T (taps x C) * X (C x plane)
        gemm(
            taps,
            s.channels,
            plane,
            weights.data(),
            (1, taps),
            &input.data()[n * s.channels * plane..],
            (plane, 1),
            0.0,
            &mut expanded,
            (plane, 1),
        );
        for o in 0..os.channels {
            let b = bias.data()[o];
            for tap in 0..4 {
                let (dy, dx) = (tap / 2, tap % 2);
                let row = &expanded[(o * 4 + tap) * plane..(o * 4 + tap + 1) * plane];
                for y in 0..s.height {
                    for x in 0..s.width {
                        od[os.index(n, o, 2 * y + dy, 2 * x + dx)] = row[y * s.width + x] + b;
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn tconv2_backward(input: &Tensor, weights: &Tensor, d_output: &Tensor) -> Result<LayerGrad> {
    let (s, os) = check(input, weights)?;
    if d_output.shape() != os.dims() {
        return shape_err(format!(
            "transposed conv d_output {:?}, forward output is {:?}",
            d_output.shape(),
            os.dims()
        ));
    }
    let taps = os.channels * 4;
    let plane = s.plane();
    let g = d_output.data();
    let mut gathered = vec![0.0; taps * plane];
    let mut d_input = Tensor::zeros4(s);
    let mut d_weights = Tensor::zeros(weights.shape())?;
    let mut d_bias = Tensor::zeros(&[os.channels])?;
    for n in 0..s.batch {
        for o in 0..os.channels {
            let start = os.index(n, o, 0, 0);
            d_bias.data_mut()[o] += g[start..start + os.plane()].iter().sum::<f64>();
            for tap in 0..4 {
                let (dy, dx) = (tap / 2, tap % 2);
                let row = &mut gathered[(o * 4 + tap) * plane..(o * 4 + tap + 1) * plane];
                for y in 0..s.height {
                    for x in 0..s.width {
                        row[y * s.width + x] = g[os.index(n, o, 2 * y + dy, 2 * x + dx)];
                    }
                }
            }
        }
        let x_off = n * s.channels * plane;
        // dX (C x plane) = W (C x taps) * G (taps x plane)
        gemm(
            s.channels,
            taps,
            plane,
            weights.data(),
            (taps, 1),
            &gathered,
            (plane, 1),
            0.0,
            &mut d_input.data_mut()[x_off..],
            (plane, 1),
        );
        // dW (C x taps) += X (C x plane) * G^T (plane x taps)
        gemm(
            s.channels,
            plane,
            taps,
            &input.data()[x_off..],
            (plane, 1),
            &gathered,
            (1, plane),
            1.0,
            d_weights.data_mut(),
            (taps, 1),
        );
    }
    Ok(LayerGrad {
        d_input,
        d_weights: Some(d_weights),
        d_bias: Some(d_bias),
    })
}
