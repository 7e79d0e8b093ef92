//! Bone segmentation of micro-CT slices with a from-scratch U-Net, plus
//! pixel-count volumetry calibrated against a reference segmentation.
//!
//! Everything numeric is `f64` and deterministic for a given seed.

pub mod data;
pub mod error;
pub mod init;
pub mod labels;
pub mod layers;
pub mod metrics;
pub mod optim;
pub mod tensor;
pub mod training;
pub mod unet;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use labels::{encode_one_hot, LabelMask, BACKGROUND, BONE, IMPLANT, NUM_CLASSES};
pub use tensor::{ElementwiseOp, Shape4, Tensor};
