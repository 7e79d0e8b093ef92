//! 2D cross-correlation with zero padding.
//!
//! Two forward paths exist: [`conv2d_forward_naive`] is the nested-loop
//! definition and [`conv2d_forward`] lowers each batch item to a patch
//! matrix and runs a GEMM. Both must agree to within 1e-12; the naive path
//! doubles as the test oracle.

use crate::error::{shape_err, Result};
use crate::layers::LayerGrad;
use crate::tensor::{Shape4, Tensor};

/// Upper bound on patch-matrix elements materialized at once. Large inputs
/// are processed in bands of output rows so that full-resolution inference
/// does not allocate gigabytes of patches.
const PATCH_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Stride-1 convolution whose output keeps the input's spatial size.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return shape_err(format!("same padding needs an odd kernel, got {kernel}"));
        }
        let spec = ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Stride-1 convolution with no padding.
    pub fn valid(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        let spec = ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return shape_err(format!("conv counts must be >= 1: {self:?}"));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    /// Patch length: rows of the lowered weight matrix.
    fn patch(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        let padded_h = input.height + 2 * self.padding;
        let padded_w = input.width + 2 * self.padding;
        if padded_h < self.kernel || padded_w < self.kernel {
            return shape_err(format!(
                "kernel {} larger than padded input {padded_h}x{padded_w}",
                self.kernel
            ));
        }
        Shape4::new(
            input.batch,
            self.out_channels,
            (padded_h - self.kernel) / self.stride + 1,
            (padded_w - self.kernel) / self.stride + 1,
        )
    }

    fn check(&self, input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(Shape4, Shape4)> {
        self.validate()?;
        let s = input.shape4()?;
        if s.channels != self.in_channels {
            return shape_err(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, s.channels
            ));
        }
        if weights.shape() != self.weight_shape() {
            return shape_err(format!(
                "conv weights {:?}, expected {:?}",
                weights.shape(),
                self.weight_shape()
            ));
        }
        if bias.shape() != [self.out_channels] {
            return shape_err(format!(
                "conv bias {:?}, expected [{}]",
                bias.shape(),
                self.out_channels
            ));
        }
        Ok((s, self.output_shape(s)?))
    }

    /// Input coordinate for output coordinate `o` and kernel tap `d`, if inside.
    #[inline]
    fn source(&self, o: usize, d: usize, extent: usize) -> Option<usize> {
        (o * self.stride + d).checked_sub(self.padding).filter(|&i| i < extent)
    }
}

/// Direct evaluation of the convolution sum, one output element at a time.
pub fn conv2d_forward_naive(input: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let (s, os) = spec.check(input, weights, bias)?;
    let k = spec.kernel;
    let (x, w, b) = (input.data(), weights.data(), bias.data());
    let mut out = Tensor::zeros4(os);
    let od = out.data_mut();
    for n in 0..s.batch {
        for o in 0..os.channels {
            for oy in 0..os.height {
                for ox in 0..os.width {
                    let mut acc = b[o];
                    for c in 0..s.channels {
                        for dy in 0..k {
                            let Some(iy) = spec.source(oy, dy, s.height) else {
                                continue;
                            };
                            for dx in 0..k {
                                let Some(ix) = spec.source(ox, dx, s.width) else {
                                    continue;
                                };
                                acc += x[s.index(n, c, iy, ix)] * w[((o * s.channels + c) * k + dy) * k + dx];
                            }
                        }
                    }
                    od[os.index(n, o, oy, ox)] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Rows of output processed per patch-matrix band.
fn band_rows(spec: &ConvSpec, os: Shape4) -> usize {
    (PATCH_BUDGET / (spec.patch() * os.width).max(1)).clamp(1, os.height)
}

/// Lowers output rows `y0..y1` of batch item `n` into a `(patch, rows*width)` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], s: Shape4, os: Shape4, spec: &ConvSpec, n: usize, y0: usize, y1: usize, col: &mut Vec<f64>) {
    let k = spec.kernel;
    let cols = (y1 - y0) * os.width;
    col.clear();
    col.resize(spec.patch() * cols, 0.0);
    for c in 0..s.channels {
        for dy in 0..k {
            for dx in 0..k {
                let row = (c * k + dy) * k + dx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in y0..y1 {
                    let Some(iy) = spec.source(oy, dy, s.height) else {
                        continue;
                    };
                    let src = s.index(n, c, iy, 0);
                    let line = &mut dst[(oy - y0) * os.width..(oy - y0 + 1) * os.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        if let Some(ix) = spec.source(ox, dx, s.width) {
                            *v = x[src + ix];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch-matrix gradient back onto the input gradient.
#[allow(clippy::too_many_arguments)]
fn col2im(col: &[f64], s: Shape4, os: Shape4, spec: &ConvSpec, n: usize, y0: usize, y1: usize, dx_out: &mut [f64]) {
    let k = spec.kernel;
    let cols = (y1 - y0) * os.width;
    for c in 0..s.channels {
        for dy in 0..k {
            for dx in 0..k {
                let row = (c * k + dy) * k + dx;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in y0..y1 {
                    let Some(iy) = spec.source(oy, dy, s.height) else {
                        continue;
                    };
                    let dst = s.index(n, c, iy, 0);
                    let line = &src[(oy - y0) * os.width..(oy - y0 + 1) * os.width];
                    for (ox, &g) in line.iter().enumerate() {
                        if let Some(ix) = spec.source(ox, dx, s.width) {
                            dx_out[dst + ix] += g;
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * a * b + beta * c` on row-major slices with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the debug assertions spell out the bounds every caller upholds;
    // all strides index within the borrowed slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let (s, os) = spec.check(input, weights, bias)?;
    let patch = spec.patch();
    let plane = os.plane();
    let band = band_rows(spec, os);
    let mut out = Tensor::zeros4(os);
    let od = out.data_mut();
    let mut col = Vec::new();
    for n in 0..s.batch {
        for y0 in (0..os.height).step_by(band) {
            let y1 = (y0 + band).min(os.height);
            im2col(input.data(), s, os, spec, n, y0, y1, &mut col);
            let cols = (y1 - y0) * os.width;
            let offset = n * os.channels * plane + y0 * os.width;
            gemm(
                os.channels,
                patch,
                cols,
                weights.data(),
                (patch, 1),
                &col,
                (cols, 1),
                0.0,
                &mut od[offset..],
                (plane, 1),
            );
        }
        for (o, &b) in bias.data().iter().enumerate() {
            let start = os.index(n, o, 0, 0);
            od[start..start + plane].iter_mut().for_each(|v| *v += b);
        }
    }
    Ok(out)
}

pub fn conv2d_backward(input: &Tensor, weights: &Tensor, spec: &ConvSpec, d_output: &Tensor) -> Result<LayerGrad> {
    let bias = Tensor::zeros(&[spec.out_channels])?;
    let (s, os) = spec.check(input, weights, &bias)?;
    if d_output.shape() != os.dims() {
        return shape_err(format!(
            "conv d_output {:?}, forward output is {:?}",
            d_output.shape(),
            os.dims()
        ));
    }
    let patch = spec.patch();
    let plane = os.plane();
    let band = band_rows(spec, os);
    let g = d_output.data();

    let mut d_input = Tensor::zeros4(s);
    let mut d_weights = Tensor::zeros(&spec.weight_shape())?;
    let mut d_bias = Tensor::zeros(&[spec.out_channels])?;
    for n in 0..s.batch {
        for o in 0..os.channels {
            let start = os.index(n, o, 0, 0);
            d_bias.data_mut()[o] += g[start..start + plane].iter().sum::<f64>();
        }
    }

    let mut col = Vec::new();
    let mut d_col = Vec::new();
    for n in 0..s.batch {
        for y0 in (0..os.height).step_by(band) {
            let y1 = (y0 + band).min(os.height);
            let cols = (y1 - y0) * os.width;
            let offset = n * os.channels * plane + y0 * os.width;
            im2col(input.data(), s, os, spec, n, y0, y1, &mut col);
            // dW (out x patch) += dY (out x cols) * col^T (cols x patch)
            gemm(
                os.channels,
                cols,
                patch,
                &g[offset..],
                (plane, 1),
                &col,
                (1, cols),
                1.0,
                d_weights.data_mut(),
                (patch, 1),
            );
            // dcol (patch x cols) = W^T (patch x out) * dY (out x cols)
            d_col.clear();
            d_col.resize(patch * cols, 0.0);
            gemm(
                patch,
                os.channels,
                cols,
                weights.data(),
                (1, patch),
                &g[offset..],
                (plane, 1),
                0.0,
                &mut d_col,
                (cols, 1),
            );
            col2im(&d_col, s, os, spec, n, y0, y1, d_input.data_mut());
        }
    }
    Ok(LayerGrad {
        d_input,
        d_weights: Some(d_weights),
        d_bias: Some(d_bias),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gradcheck::{grad_check, GradCheckLayer};
    use crate::testutil::random_tensor;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn one_by_one_kernel_scales() {
        let spec = ConvSpec::same(1, 1, 1).unwrap();
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[1, 1, 1, 1], &[2.0]);
        let b = t(&[1], &[0.0]);
        let y = conv2d_forward(&x, &w, &b, &spec).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn ones_kernel_without_padding() {
        // Oracle: 1+2+4+5, 2+3+5+6, 4+5+7+8, 5+6+8+9 by hand.
        let spec = ConvSpec::valid(1, 1, 2).unwrap();
        let x = t(&[1, 1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let w = t(&[1, 1, 2, 2], &[1.0; 4]);
        let b = t(&[1], &[0.0]);
        for y in [
            conv2d_forward_naive(&x, &w, &b, &spec).unwrap(),
            conv2d_forward(&x, &w, &b, &spec).unwrap(),
        ] {
            assert_eq!(y.shape(), &[1, 1, 2, 2]);
            assert_eq!(y.data(), &[12.0, 16.0, 24.0, 28.0]);
        }
    }

    #[test]
    fn delta_kernel_is_identity() {
        let spec = ConvSpec::same(2, 2, 3).unwrap();
        let x = random_tensor(&[2, 2, 5, 6], 3);
        let mut w = Tensor::zeros(&spec.weight_shape()).unwrap();
        for c in 0..2 {
            w.data_mut()[((c * 2 + c) * 3 + 1) * 3 + 1] = 1.0;
        }
        let b = Tensor::zeros(&[2]).unwrap();
        assert_eq!(conv2d_forward(&x, &w, &b, &spec).unwrap(), x);
        assert_eq!(conv2d_forward_naive(&x, &w, &b, &spec).unwrap(), x);
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let spec = ConvSpec::same(2, 1, 3).unwrap();
        let x = Tensor::zeros(&[1, 3, 4, 4]).unwrap();
        let w = Tensor::zeros(&spec.weight_shape()).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        assert!(conv2d_forward(&x, &w, &b, &spec).is_err());
        assert!(ConvSpec::same(1, 1, 2).is_err());
        let x = Tensor::zeros(&[1, 2, 4, 4]).unwrap();
        let bad_dy = Tensor::zeros(&[1, 1, 3, 3]).unwrap();
        assert!(conv2d_backward(&x, &w, &spec, &bad_dy).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = ConvSpec::same(2, 3, 3).unwrap();
        let x = random_tensor(&[1, 2, 4, 4], 1);
        let w = random_tensor(&spec.weight_shape(), 2);
        let dy = Tensor::zeros(&[1, 3, 4, 4]).unwrap();
        let g = conv2d_backward(&x, &w, &spec, &dy).unwrap();
        assert_eq!(g.d_input.max_abs(), 0.0);
        assert_eq!(g.d_weights.unwrap().max_abs(), 0.0);
        assert_eq!(g.d_bias.unwrap().max_abs(), 0.0);
    }

    #[test]
    fn scalar_product_rule() {
        let spec = ConvSpec::same(1, 1, 1).unwrap();
        let x = t(&[1, 1, 1, 1], &[3.0]);
        let w = t(&[1, 1, 1, 1], &[-2.5]);
        let g = conv2d_backward(&x, &w, &spec, &t(&[1, 1, 1, 1], &[1.0])).unwrap();
        assert_eq!(g.d_weights.unwrap().data(), &[3.0]);
        assert_eq!(g.d_input.data(), &[-2.5]);
        assert_eq!(g.d_bias.unwrap().data(), &[1.0]);
    }

    #[test]
    fn banded_gemm_matches_naive() {
        // Wide enough that band_rows splits the output.
        let spec = ConvSpec::same(3, 2, 3).unwrap();
        let x = random_tensor(&[1, 3, 700, 700], 9);
        let w = random_tensor(&spec.weight_shape(), 10);
        let b = random_tensor(&[2], 11);
        assert!(band_rows(&spec, spec.output_shape(x.shape4().unwrap()).unwrap()) < 700);
        let fast = conv2d_forward(&x, &w, &b, &spec).unwrap();
        let slow = conv2d_forward_naive(&x, &w, &b, &spec).unwrap();
        let diff = fast.sub(&slow).unwrap().max_abs();
        assert!(diff < 1e-12, "max diff {diff}");
    }

    #[test]
    fn strided_gemm_matches_naive() {
        let spec = ConvSpec {
            in_channels: 2,
            out_channels: 3,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let x = random_tensor(&[2, 2, 7, 6], 4);
        let w = random_tensor(&spec.weight_shape(), 5);
        let b = random_tensor(&[3], 6);
        let fast = conv2d_forward(&x, &w, &b, &spec).unwrap();
        let slow = conv2d_forward_naive(&x, &w, &b, &spec).unwrap();
        assert_eq!(fast.shape(), &[2, 3, 4, 3]);
        assert!(fast.sub(&slow).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn linear_in_input_with_bias_counted_once() {
        // Integer-valued data keeps every sum exact.
        let spec = ConvSpec::same(2, 2, 3).unwrap();
        let ints = |shape: &[usize], seed| {
            let r = random_tensor(shape, seed);
            Tensor::from_vec(shape, r.data().iter().map(|v| (v * 8.0).round()).collect()).unwrap()
        };
        let a = ints(&[1, 2, 5, 5], 1);
        let b = ints(&[1, 2, 5, 5], 2);
        let w = ints(&spec.weight_shape(), 3);
        let bias = ints(&[2], 4);
        let fwd = |x: &Tensor| conv2d_forward(x, &w, &bias, &spec).unwrap();
        let lhs = fwd(&a.add(&b).unwrap());
        let bias_map = conv2d_forward(&Tensor::zeros(&[1, 2, 5, 5]).unwrap(), &w, &bias, &spec).unwrap();
        let rhs = fwd(&a).add(&fwd(&b)).unwrap().sub(&bias_map).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in [42, 1, 2, 3, 4] {
            let err = grad_check(GradCheckLayer::Conv2d, &[1, 2, 5, 5], seed).unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }
}
