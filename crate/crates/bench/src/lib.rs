//! Fixtures shared by the benchmarks.

use microvolumetry::init::{seeded_rng, uniform_tensor};
use microvolumetry::layers::ConvSpec;
use microvolumetry::unet::{build, UNetConfig, UNetParams};
use microvolumetry::Tensor;

pub struct ConvFixture {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
    pub spec: ConvSpec,
}

/// A same-padded 3x3 convolution from `channels` to `channels` on a `size` square.
pub fn conv_fixture(batch: usize, channels: usize, size: usize) -> ConvFixture {
    let mut rng = seeded_rng(1);
    let spec = ConvSpec::same(channels, channels, 3).unwrap();
    ConvFixture {
        input: uniform_tensor(&[batch, channels, size, size], -1.0, 1.0, &mut rng).unwrap(),
        weights: uniform_tensor(&spec.weight_shape(), -1.0, 1.0, &mut rng).unwrap(),
        bias: uniform_tensor(&[channels], -1.0, 1.0, &mut rng).unwrap(),
        spec,
    }
}

/// The desk-scale network: depth 4, 16 base channels, 64x64 input.
pub fn desk_config() -> UNetConfig {
    UNetConfig {
        depth: 4,
        base_channels: 16,
        input_size: 64,
        ..UNetConfig::default()
    }
}

pub fn network(config: &UNetConfig, batch: usize) -> (UNetParams, Tensor) {
    let params = build(config, 0).unwrap();
    let s = config.input_size;
    let x = uniform_tensor(&[batch, 1, s, s], 0.0, 1.0, &mut seeded_rng(2)).unwrap();
    (params, x)
}
