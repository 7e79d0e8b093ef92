//! Mini-batch training loop: seeded split, per-epoch seeded shuffle,
//! cross-entropy on the network scores and Adam updates.

use rand::seq::SliceRandom;

use crate::data::{downscale, downscale_mask, images_to_tensor, split_indices, GrayImage, SplitRule};
use crate::error::{Error, Result};
use crate::init::seeded_rng;
use crate::labels::{encode_one_hot, LabelMask};
use crate::layers::categorical_cross_entropy;
use crate::metrics::{confusion, pixel_accuracy, ConfusionCounts};
use crate::optim::{AdamConfig, AdamState};
use crate::unet::{backward, build, forward, predict, UNetConfig, UNetParams};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub unet: UNetConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub split: SplitRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            unet: UNetConfig::default(),
            epochs: 50,
            batch_size: 2,
            adam: AdamConfig::default(),
            seed: 0,
            split: SplitRule::NinetyFiveFive,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        self.adam.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if let SplitRule::Fraction(f) = self.split {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("validation_fraction {f} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.train_loss, self.train_acc, self.val_loss, self.val_acc
        )
    }
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in history {
        out.push_str(&m.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: UNetParams,
    pub history: Vec<EpochMetrics>,
    /// Validation confusion after the final epoch.
    pub validation: ConfusionCounts,
}

/// Brings a pair to the network's input size. Larger slices are downscaled;
/// smaller ones are rejected.
pub fn fit_pair(image: &GrayImage, mask: &LabelMask, size: usize) -> Result<(GrayImage, LabelMask)> {
    if (image.width(), image.height()) != (mask.width(), mask.height()) {
        return Err(Error::Validation(format!(
            "image {}x{} does not match mask {}x{}",
            image.width(),
            image.height(),
            mask.width(),
            mask.height()
        )));
    }
    if image.width() < size || image.height() < size {
        return Err(Error::Validation(format!(
            "slice {}x{} is smaller than the network input {size}x{size}",
            image.width(),
            image.height()
        )));
    }
    if image.width() == size && image.height() == size {
        return Ok((image.clone(), mask.clone()));
    }
    Ok((downscale(image, size)?, downscale_mask(mask, size)?))
}

fn batch_tensors(pairs: &[(GrayImage, LabelMask)], idx: &[usize]) -> Result<(crate::Tensor, Vec<LabelMask>)> {
    let images: Vec<&GrayImage> = idx.iter().map(|&i| &pairs[i].0).collect();
    let masks: Vec<LabelMask> = idx.iter().map(|&i| pairs[i].1.clone()).collect();
    Ok((images_to_tensor(&images)?, masks))
}

/// Pixel-weighted mean loss and confusion of `params` over `pairs`.
pub fn evaluate(
    params: &UNetParams,
    config: &UNetConfig,
    pairs: &[(GrayImage, LabelMask)],
    batch_size: usize,
) -> Result<(f64, ConfusionCounts)> {
    let idx: Vec<usize> = (0..pairs.len()).collect();
    let mut loss_sum = 0.0;
    let mut counts = ConfusionCounts::default();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, masks) = batch_tensors(pairs, chunk)?;
        let scores = predict(params, config, &x)?;
        let (loss, _) = categorical_cross_entropy(&scores, &encode_one_hot(&masks)?)?;
        loss_sum += loss * chunk.len() as f64;
        counts.merge(&confusion(&scores.argmax_channel()?, &masks)?);
    }
    Ok((loss_sum / pairs.len().max(1) as f64, counts))
}

/// Trains from scratch. `on_epoch` sees each epoch's metrics as they land.
pub fn train(
    config: &TrainConfig,
    pairs: &[(GrayImage, LabelMask)],
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    let size = config.unet.input_size;
    let pairs: Vec<(GrayImage, LabelMask)> = pairs.iter().map(|(i, m)| fit_pair(i, m, size)).collect::<Result<_>>()?;
    let (train_idx, val_idx) = split_indices(pairs.len(), config.split, config.seed)?;
    let validation: Vec<(GrayImage, LabelMask)> = val_idx.iter().map(|&i| pairs[i].clone()).collect();

    let mut params = build(&config.unet, config.seed)?;
    let mut adam = AdamState::new(&params, config.adam);
    let mut history = Vec::with_capacity(config.epochs);
    let mut last_val = ConfusionCounts::default();

    for epoch in 1..=config.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut seeded_rng(config.seed.wrapping_add(epoch as u64)));
        let mut loss_sum = 0.0;
        let mut counts = ConfusionCounts::default();
        for chunk in order.chunks(config.batch_size) {
            let (x, masks) = batch_tensors(&pairs, chunk)?;
            let (scores, cache) = forward(&params, &config.unet, &x)?;
            let (loss, d_scores) = categorical_cross_entropy(&scores, &encode_one_hot(&masks)?)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
            counts.merge(&confusion(&scores.argmax_channel()?, &masks)?);
            let grads = backward(&params, &config.unet, &cache, &d_scores)?;
            adam.step(&mut params, &grads)?;
        }
        let (val_loss, val_counts) = evaluate(&params, &config.unet, &validation, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_acc: pixel_accuracy(&counts)?,
            val_loss,
            val_acc: pixel_accuracy(&val_counts)?,
        };
        on_epoch(&metrics);
        history.push(metrics);
        last_val = val_counts;
    }
    Ok(TrainOutcome {
        params,
        history,
        validation: last_val,
    })
}
