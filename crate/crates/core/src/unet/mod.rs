//! U-Net assembled from the layer kernels.
//!
//! The contraction path has `depth` steps of two 3x3 same-padded
//! convolutions with ReLU, each followed by 2x2 max-pooling, with channels
//! `base * 2^i` at step `i`. A bottleneck block at `base * 2^depth` channels
//! follows without pooling. Each expansion step upsamples with a 2x2
//! transposed convolution that halves the channels, concatenates the
//! matching contraction output, and applies two more 3x3 convolutions with
//! ReLU. A 1x1 convolution maps to class scores through the output head.

mod checkpoint;
mod gradcheck;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use gradcheck::grad_check_end_to_end;

use crate::error::{shape_err, Error, Result};
use crate::init::{normal_tensor, seeded_rng};
use crate::labels::NUM_CLASSES;
use crate::layers::*;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutputHead {
    Sigmoid,
    Softmax,
}

impl OutputHead {
    pub fn as_byte(self) -> u8 {
        match self {
            OutputHead::Sigmoid => 0,
            OutputHead::Softmax => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(OutputHead::Sigmoid),
            1 => Some(OutputHead::Softmax),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OutputHead::Sigmoid => "sigmoid",
            OutputHead::Softmax => "softmax",
        }
    }
}

impl std::str::FromStr for OutputHead {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(OutputHead::Sigmoid),
            "softmax" => Ok(OutputHead::Softmax),
            other => Err(Error::Config(format!("unknown output head {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    pub output_head: OutputHead,
    pub input_size: usize,
    pub skip_connections: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            depth: 4,
            base_channels: 64,
            in_channels: 1,
            num_classes: NUM_CLASSES,
            output_head: OutputHead::Sigmoid,
            input_size: 512,
            skip_connections: true,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.depth == 0 {
            return bad("depth must be >= 1".into());
        }
        if self.base_channels == 0 || self.in_channels == 0 {
            return bad("channel counts must be >= 1".into());
        }
        if self.num_classes != NUM_CLASSES {
            return bad(format!("num_classes must be {NUM_CLASSES}, got {}", self.num_classes));
        }
        let stride = 1usize
            .checked_shl(self.depth as u32)
            .filter(|&s| s > 0)
            .ok_or_else(|| Error::Config(format!("depth {} too large", self.depth)))?;
        if self.input_size == 0 || !self.input_size.is_multiple_of(stride) {
            return bad(format!(
                "input_size {} is not divisible by 2^depth = {stride}",
                self.input_size
            ));
        }
        Ok(())
    }

    /// Channels at contraction step `level`; `level == depth` is the bottleneck.
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv(ConvSpec),
    /// 2x2 stride-2 transposed convolution.
    UpConv {
        in_channels: usize,
        out_channels: usize,
    },
}

impl LayerKind {
    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerKind::Conv(spec) => spec.weight_shape().to_vec(),
            LayerKind::UpConv {
                in_channels,
                out_channels,
            } => vec![in_channels, out_channels, 2, 2],
        }
    }

    pub fn out_channels(&self) -> usize {
        match *self {
            LayerKind::Conv(spec) => spec.out_channels,
            LayerKind::UpConv { out_channels, .. } => out_channels,
        }
    }

    /// Number of products summed into each output element.
    fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Conv(spec) => spec.in_channels * spec.kernel * spec.kernel,
            LayerKind::UpConv { in_channels, .. } => in_channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    pub name: String,
    pub kind: LayerKind,
}

/// Every parameterized layer in forward order.
pub fn layer_plan(config: &UNetConfig) -> Result<Vec<LayerPlan>> {
    config.validate()?;
    let conv = |name: String, i, o, k| -> Result<LayerPlan> {
        Ok(LayerPlan {
            name,
            kind: LayerKind::Conv(ConvSpec::same(i, o, k)?),
        })
    };
    let mut plan = Vec::new();
    let mut ch = config.in_channels;
    for level in 0..config.depth {
        let c = config.channels_at(level);
        plan.push(conv(format!("enc{level}.conv1"), ch, c, 3)?);
        plan.push(conv(format!("enc{level}.conv2"), c, c, 3)?);
        ch = c;
    }
    let c = config.channels_at(config.depth);
    plan.push(conv("bottleneck.conv1".into(), ch, c, 3)?);
    plan.push(conv("bottleneck.conv2".into(), c, c, 3)?);
    ch = c;
    for level in (0..config.depth).rev() {
        let c = config.channels_at(level);
        plan.push(LayerPlan {
            name: format!("dec{level}.up"),
            kind: LayerKind::UpConv {
                in_channels: ch,
                out_channels: c,
            },
        });
        let merged = if config.skip_connections { 2 * c } else { c };
        plan.push(conv(format!("dec{level}.conv1"), merged, c, 3)?);
        plan.push(conv(format!("dec{level}.conv2"), c, c, 3)?);
        ch = c;
    }
    plan.push(conv("head".into(), ch, config.num_classes, 1)?);
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Weights and biases of every layer, in forward order. Gradients use the
/// same structure.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetParams {
    layers: Vec<Layer>,
}

impl UNetParams {
    pub fn from_layers(layers: Vec<Layer>) -> Self {
        UNetParams { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn get(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Weight then bias for each layer.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        UNetParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    name: l.name.clone(),
                    weight: Tensor::zeros(l.weight.shape()).expect("valid shape"),
                    bias: Tensor::zeros(l.bias.shape()).expect("valid shape"),
                })
                .collect(),
        }
    }

    /// Checks that names and shapes agree with the layer plan of `config`.
    pub fn check_against(&self, config: &UNetConfig) -> Result<()> {
        let plan = layer_plan(config)?;
        if plan.len() != self.layers.len() {
            return shape_err(format!(
                "config needs {} layers, params have {}",
                plan.len(),
                self.layers.len()
            ));
        }
        for (p, l) in plan.iter().zip(&self.layers) {
            if p.name != l.name
                || l.weight.shape() != p.kind.weight_shape()
                || l.bias.shape() != [p.kind.out_channels()]
            {
                return shape_err(format!(
                    "layer {} ({:?}/{:?}) does not match planned {} {:?}",
                    l.name,
                    l.weight.shape(),
                    l.bias.shape(),
                    p.name,
                    p.kind.weight_shape()
                ));
            }
        }
        Ok(())
    }
}

/// Parameter count implied by `config`, without allocating the weights.
pub fn parameter_count(config: &UNetConfig) -> Result<usize> {
    Ok(layer_plan(config)?
        .iter()
        .map(|p| p.kind.weight_shape().iter().product::<usize>() + p.kind.out_channels())
        .sum())
}

/// He-initialized weights (std `sqrt(2 / fan_in)`) and zero biases.
pub fn build(config: &UNetConfig, seed: u64) -> Result<UNetParams> {
    let mut rng = seeded_rng(seed);
    let layers = layer_plan(config)?
        .into_iter()
        .map(|p| {
            let std_dev = (2.0 / p.kind.fan_in() as f64).sqrt();
            Ok(Layer {
                weight: normal_tensor(&p.kind.weight_shape(), std_dev, &mut rng)?,
                bias: Tensor::zeros(&[p.kind.out_channels()])?,
                name: p.name,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UNetParams { layers })
}

/// Activations of one two-convolution block.
#[derive(Debug, Clone)]
struct BlockCache {
    input: Tensor,
    mid: Tensor,
    out: Tensor,
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    encoders: Vec<BlockCache>,
    pools: Vec<PoolIndices>,
    bottleneck: BlockCache,
    /// Indexed by level, like `encoders`.
    up_inputs: Vec<Tensor>,
    decoders: Vec<BlockCache>,
    scores: Tensor,
}

impl ForwardCache {
    pub fn scores(&self) -> &Tensor {
        &self.scores
    }
}

/// Layer positions within [`UNetParams`].
struct Index {
    depth: usize,
}

impl Index {
    fn enc(&self, level: usize) -> usize {
        2 * level
    }

    fn bottleneck(&self) -> usize {
        2 * self.depth
    }

    /// Position of `dec{level}.up`; its two convolutions follow.
    fn dec(&self, level: usize) -> usize {
        2 * self.depth + 2 + 3 * (self.depth - 1 - level)
    }

    fn head(&self) -> usize {
        5 * self.depth + 2
    }
}

fn conv_spec(layer: &Layer) -> ConvSpec {
    let s = layer.weight.shape();
    ConvSpec {
        in_channels: s[1],
        out_channels: s[0],
        kernel: s[2],
        stride: 1,
        padding: s[2] / 2,
    }
}

fn conv_relu(layer: &Layer, x: &Tensor) -> Result<Tensor> {
    let spec = conv_spec(layer);
    Ok(relu(&conv2d_forward(x, &layer.weight, &layer.bias, &spec)?))
}

fn block(params: &UNetParams, first: usize, x: Tensor, keep: bool) -> Result<(Tensor, Option<BlockCache>)> {
    let mid = conv_relu(&params.layers[first], &x)?;
    let out = conv_relu(&params.layers[first + 1], &mid)?;
    let cache = keep.then(|| BlockCache {
        input: x,
        mid,
        out: out.clone(),
    });
    Ok((out, cache))
}

fn check_input(params: &UNetParams, config: &UNetConfig, batch: &Tensor) -> Result<()> {
    params.check_against(config)?;
    let s = batch.shape4()?;
    if s.channels != config.in_channels || s.height != config.input_size || s.width != config.input_size {
        return shape_err(format!(
            "network expects (N, {}, {}, {}), got {:?}",
            config.in_channels,
            config.input_size,
            config.input_size,
            s.dims()
        ));
    }
    Ok(())
}

fn run(params: &UNetParams, config: &UNetConfig, batch: &Tensor, keep: bool) -> Result<(Tensor, Option<ForwardCache>)> {
    check_input(params, config, batch)?;
    let idx = Index { depth: config.depth };
    let mut encoders = Vec::new();
    let mut pools = Vec::new();
    let mut skips = Vec::with_capacity(config.depth);
    let mut x = batch.clone();
    for level in 0..config.depth {
        let (out, cache) = block(params, idx.enc(level), x, keep)?;
        let (pooled, indices) = maxpool2_forward(&out)?;
        encoders.extend(cache);
        if keep {
            pools.push(indices);
        }
        skips.push(out);
        x = pooled;
    }
    let (mut x, bottleneck) = block(params, idx.bottleneck(), x, keep)?;

    let mut up_inputs = vec![None; config.depth];
    let mut decoders = vec![None; config.depth];
    for level in (0..config.depth).rev() {
        let up = &params.layers[idx.dec(level)];
        let upsampled = tconv2_forward(&x, &up.weight, &up.bias)?;
        if keep {
            up_inputs[level] = Some(x);
        }
        let skip = skips.pop().expect("one skip per level");
        let merged = if config.skip_connections {
            concat_channels(&upsampled, &skip)?
        } else {
            upsampled
        };
        let (out, cache) = block(params, idx.dec(level) + 1, merged, keep)?;
        decoders[level] = cache;
        x = out;
    }

    let head = &params.layers[idx.head()];
    let logits = conv2d_forward(&x, &head.weight, &head.bias, &conv_spec(head))?;
    let scores = match config.output_head {
        OutputHead::Sigmoid => sigmoid(&logits),
        OutputHead::Softmax => softmax_channel(&logits)?,
    };
    let cache = match bottleneck {
        Some(bottleneck) if keep => Some(ForwardCache {
            encoders,
            pools,
            bottleneck,
            up_inputs: up_inputs.into_iter().map(|u| u.expect("cached")).collect(),
            decoders: decoders.into_iter().map(|d| d.expect("cached")).collect(),
            scores: scores.clone(),
        }),
        _ => None,
    };
    Ok((scores, cache))
}

/// Class scores for `batch` plus the activations needed for [`backward`].
pub fn forward(params: &UNetParams, config: &UNetConfig, batch: &Tensor) -> Result<(Tensor, ForwardCache)> {
    let (scores, cache) = run(params, config, batch, true)?;
    Ok((scores, cache.expect("cache requested")))
}

/// Forward pass that keeps only what the next layer needs.
pub fn predict(params: &UNetParams, config: &UNetConfig, batch: &Tensor) -> Result<Tensor> {
    Ok(run(params, config, batch, false)?.0)
}

fn conv_grad(layer: &Layer, input: &Tensor, d_out: &Tensor, grads: &mut Layer) -> Result<Tensor> {
    let g = conv2d_backward(input, &layer.weight, &conv_spec(layer), d_out)?;
    grads.weight = g.d_weights.expect("conv has weights");
    grads.bias = g.d_bias.expect("conv has bias");
    Ok(g.d_input)
}

fn block_grad(
    params: &UNetParams,
    grads: &mut UNetParams,
    first: usize,
    cache: &BlockCache,
    d_out: &Tensor,
) -> Result<Tensor> {
    let d = relu_backward(&cache.out, d_out)?;
    let d = conv_grad(&params.layers[first + 1], &cache.mid, &d, &mut grads.layers[first + 1])?;
    let d = relu_backward(&cache.mid, &d)?;
    conv_grad(&params.layers[first], &cache.input, &d, &mut grads.layers[first])
}

/// Gradients of every parameter given the upstream gradient on the scores.
pub fn backward(
    params: &UNetParams,
    config: &UNetConfig,
    cache: &ForwardCache,
    d_scores: &Tensor,
) -> Result<UNetParams> {
    params.check_against(config)?;
    if d_scores.shape() != cache.scores.shape() {
        return Err(Error::Internal(format!(
            "d_scores {:?} does not match cached scores {:?}",
            d_scores.shape(),
            cache.scores.shape()
        )));
    }
    if cache.encoders.len() != config.depth || cache.decoders.len() != config.depth {
        return Err(Error::Internal(format!(
            "cache holds {} levels, config has depth {}",
            cache.encoders.len(),
            config.depth
        )));
    }
    let idx = Index { depth: config.depth };
    let mut grads = params.zeros_like();

    let d_logits = match config.output_head {
        OutputHead::Sigmoid => sigmoid_backward(&cache.scores, d_scores)?,
        OutputHead::Softmax => softmax_backward(&cache.scores, d_scores)?,
    };
    let h = idx.head();
    let mut d = conv_grad(
        &params.layers[h],
        &cache.decoders[0].out,
        &d_logits,
        &mut grads.layers[h],
    )?;

    let mut d_skips = Vec::with_capacity(config.depth);
    for level in 0..config.depth {
        let at = idx.dec(level);
        let d_merged = block_grad(params, &mut grads, at + 1, &cache.decoders[level], &d)?;
        let d_up = if config.skip_connections {
            let up_channels = params.layers[at].weight.shape()[1];
            let (d_up, d_skip) = split_channels(&d_merged, up_channels)?;
            d_skips.push(Some(d_skip));
            d_up
        } else {
            d_skips.push(None);
            d_merged
        };
        let up = &params.layers[at];
        let g = tconv2_backward(&cache.up_inputs[level], &up.weight, &d_up)?;
        grads.layers[at].weight = g.d_weights.expect("tconv has weights");
        grads.layers[at].bias = g.d_bias.expect("tconv has bias");
        d = g.d_input;
    }

    d = block_grad(params, &mut grads, idx.bottleneck(), &cache.bottleneck, &d)?;
    for level in (0..config.depth).rev() {
        let mut d_out = maxpool2_backward(&cache.pools[level], &d)?;
        if let Some(d_skip) = d_skips[level].take() {
            d_out = d_out.add(&d_skip)?;
        }
        d = block_grad(params, &mut grads, idx.enc(level), &cache.encoders[level], &d_out)?;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests;
