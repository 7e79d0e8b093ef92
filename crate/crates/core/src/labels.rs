//! Per-pixel class maps: 0 background, 1 bone, 2 implant.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape4, Tensor};

pub const NUM_CLASSES: usize = 3;

pub const BACKGROUND: u8 = 0;
pub const BONE: u8 = 1;
pub const IMPLANT: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return shape_err(format!("mask extents must be >= 1, got {width}x{height}"));
        }
        if labels.len() != width * height {
            return shape_err(format!(
                "{width}x{height} mask needs {} labels, got {}",
                width * height,
                labels.len()
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Validation(format!("label {bad} outside {{0,1,2}}")));
        }
        Ok(LabelMask { width, height, labels })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Result<Self> {
        Self::new(width, height, vec![label; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn count(&self, class: u8) -> u64 {
        self.labels.iter().filter(|&&l| l == class).count() as u64
    }
}

/// Stacks masks into a `(batch, 3, h, w)` indicator tensor.
pub fn encode_one_hot(masks: &[LabelMask]) -> Result<Tensor> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Argument("no masks to encode".into()))?;
    let (w, h) = (first.width, first.height);
    if masks.iter().any(|m| m.width != w || m.height != h) {
        return shape_err("masks in a batch must share dimensions");
    }
    let s = Shape4::new(masks.len(), NUM_CLASSES, h, w)?;
    let mut t = Tensor::zeros4(s);
    let plane = s.plane();
    let data = t.data_mut();
    for (b, m) in masks.iter().enumerate() {
        for (p, &l) in m.labels.iter().enumerate() {
            data[(b * NUM_CLASSES + l as usize) * plane + p] = 1.0;
        }
    }
    Ok(t)
}
