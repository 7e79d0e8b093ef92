//! Dense row-major `f64` tensors.
//!
//! No strides, no views, no broadcasting. Image batches use the NCHW layout
//! described by [`Shape4`].

use crate::error::{shape_err, Error, Result};
use crate::labels::{LabelMask, NUM_CLASSES};

/// Extents of an image batch in NCHW order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape4 {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        let s = Shape4 {
            batch,
            channels,
            height,
            width,
        };
        if batch == 0 || channels == 0 || height == 0 || width == 0 {
            return shape_err(format!("every extent must be >= 1, got {s:?}"));
        }
        Ok(s)
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub fn len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixels per channel plane.
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.channels + c) * self.height + y) * self.width + x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return shape_err("shape must have at least one extent");
    }
    if shape.contains(&0) {
        return shape_err(format!("zero extent in shape {shape:?}"));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn fill(shape: &[usize], value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Validation(format!("fill value {value} is not finite")));
        }
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::fill(shape, 0.0)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = check_shape(shape)?;
        if data.len() != n {
            return shape_err(format!("shape {shape:?} needs {n} elements, got {}", data.len()));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub(crate) fn zeros4(s: Shape4) -> Self {
        Tensor {
            shape: s.dims().to_vec(),
            data: vec![0.0; s.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interprets the tensor as an NCHW batch.
    pub fn shape4(&self) -> Result<Shape4> {
        match self.shape[..] {
            [b, c, h, w] => Shape4::new(b, c, h, w),
            _ => shape_err(format!("expected rank-4 tensor, got shape {:?}", self.shape)),
        }
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn elementwise(&self, other: &Tensor, op: ElementwiseOp) -> Result<Tensor> {
        if self.shape != other.shape {
            return shape_err(format!("elementwise {op:?} on {:?} and {:?}", self.shape, other.shape));
        }
        let f: fn(f64, f64) -> f64 = match op {
            ElementwiseOp::Add => |a, b| a + b,
            ElementwiseOp::Sub => |a, b| a - b,
            ElementwiseOp::Mul => |a, b| a * b,
        };
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Mul)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn reduce_sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Per-pixel index of the largest channel, one mask per batch item.
    /// Ties resolve to the lowest class index.
    pub fn argmax_channel(&self) -> Result<Vec<LabelMask>> {
        let s = self.shape4()?;
        if s.channels != NUM_CLASSES {
            return shape_err(format!(
                "argmax_channel needs {NUM_CLASSES} channels, got {}",
                s.channels
            ));
        }
        let plane = s.plane();
        let mut masks = Vec::with_capacity(s.batch);
        for b in 0..s.batch {
            let base = b * NUM_CLASSES * plane;
            let labels = (0..plane)
                .map(|p| {
                    let mut best = 0u8;
                    let mut best_val = self.data[base + p];
                    for k in 1..NUM_CLASSES {
                        let v = self.data[base + k * plane + p];
                        if v > best_val {
                            best_val = v;
                            best = k as u8;
                        }
                    }
                    best
                })
                .collect();
            masks.push(LabelMask::new(s.width, s.height, labels)?);
        }
        Ok(masks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fill_examples() {
        let t = Tensor::fill(&[2, 2], 0.0).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        let t = Tensor::fill(&[3], 1.5).unwrap();
        assert_eq!(t.data(), &[1.5; 3]);
        let t = Tensor::fill(&[1, 1, 2, 2], 7.0).unwrap();
        assert_eq!(t.shape(), &[1, 1, 2, 2]);
        assert_eq!(t.data(), &[7.0; 4]);
    }

    #[test]
    fn fill_rejects_bad_shapes() {
        assert!(matches!(Tensor::fill(&[2, 0], 1.0), Err(Error::Shape(_))));
        assert!(matches!(Tensor::fill(&[], 1.0), Err(Error::Shape(_))));
        assert!(Tensor::fill(&[2], f64::NAN).is_err());
    }

    #[test]
    fn elementwise_examples() {
        let a = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        let z = Tensor::zeros(&[2]).unwrap();
        assert_eq!(a.mul(&z).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(b.sub(&b).unwrap(), Tensor::zeros(&[2]).unwrap());
        let c = Tensor::zeros(&[3]).unwrap();
        assert!(matches!(a.add(&c), Err(Error::Shape(_))));
    }

    #[test]
    fn reduce_sum_examples() {
        let t = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.reduce_sum(), 10.0);
        assert_eq!(Tensor::zeros(&[5]).unwrap().reduce_sum(), 0.0);
        assert_eq!(Tensor::fill(&[4, 4], 0.25).unwrap().reduce_sum(), 4.0);
    }

    fn pixel(values: [f64; 3]) -> Tensor {
        Tensor::from_vec(&[1, 3, 1, 1], values.to_vec()).unwrap()
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(pixel([0.1, 0.8, 0.1]).argmax_channel().unwrap()[0].labels(), &[1]);
        assert_eq!(pixel([0.5, 0.5, 0.0]).argmax_channel().unwrap()[0].labels(), &[0]);
        let uniform = Tensor::fill(&[2, 3, 4, 4], 1.0 / 3.0).unwrap();
        let masks = uniform.argmax_channel().unwrap();
        assert_eq!(masks.len(), 2);
        assert!(masks.iter().all(|m| m.labels().iter().all(|&l| l == 0)));
        let wrong = Tensor::zeros(&[1, 2, 2, 2]).unwrap();
        assert!(matches!(wrong.argmax_channel(), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn reshape_round_trip_is_bit_identical(data in prop::collection::vec(-1e6f64..1e6, 24)) {
            let t = Tensor::from_vec(&[2, 3, 4], data).unwrap();
            let back = t.clone().reshape(&[6, 4]).unwrap().reshape(&[24]).unwrap()
                .reshape(&[2, 3, 4]).unwrap();
            prop_assert_eq!(t, back);
        }

        #[test]
        fn add_commutes_and_associates_on_integers(
            a in prop::collection::vec(-1000i32..1000, 8),
            b in prop::collection::vec(-1000i32..1000, 8),
            c in prop::collection::vec(-1000i32..1000, 8),
        ) {
            let t = |v: &Vec<i32>| Tensor::from_vec(&[8], v.iter().map(|&x| x as f64).collect()).unwrap();
            let (a, b, c) = (t(&a), t(&b), t(&c));
            prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
            prop_assert_eq!(a.add(&b).unwrap().add(&c).unwrap(), a.add(&b.add(&c).unwrap()).unwrap());
        }

        #[test]
        fn argmax_labels_stay_in_class_range(data in prop::collection::vec(-5.0f64..5.0, 3 * 9)) {
            let t = Tensor::from_vec(&[1, 3, 3, 3], data).unwrap();
            let m = &t.argmax_channel().unwrap()[0];
            prop_assert!(m.labels().iter().all(|&l| l < 3));
        }
    }
}
