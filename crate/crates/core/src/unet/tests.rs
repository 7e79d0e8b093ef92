use super::*;
use crate::init::{seeded_rng, uniform_tensor};

fn desk(depth: usize, base: usize, size: usize) -> UNetConfig {
    UNetConfig {
        depth,
        base_channels: base,
        input_size: size,
        ..UNetConfig::default()
    }
}

#[test]
fn first_layer_of_default_network() {
    let plan = layer_plan(&UNetConfig::default()).unwrap();
    assert_eq!(plan[0].kind.weight_shape(), vec![64, 1, 3, 3]);
    let first = 64 * 9 + 64;
    assert_eq!(first, 640);
    let p = build(&desk(4, 64, 64), 0).unwrap();
    let l = &p.layers()[0];
    assert_eq!(l.weight.len() + l.bias.len(), 640);
}

#[test]
fn default_parameter_count() {
    // Shape arithmetic, level by level (c_i = 64 * 2^i):
    //   contraction  sum 9*c_in*c_i + 9*c_i^2 + 2*c_i
    //   bottleneck   9*512*1024 + 9*1024^2 + 2*1024
    //   expansion    sum 4*c_{i+1}*c_i + 9*2c_i*c_i + 9*c_i^2 + 3*c_i
    //   head         64*3 + 3
    assert_eq!(parameter_count(&UNetConfig::default()).unwrap(), 31_030_723);
}

#[test]
fn depth_one_layer_counts() {
    let plan = layer_plan(&desk(1, 1, 4)).unwrap();
    let names: Vec<&str> = plan.iter().map(|p| p.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "enc0.conv1",
            "enc0.conv2",
            "bottleneck.conv1",
            "bottleneck.conv2",
            "dec0.up",
            "dec0.conv1",
            "dec0.conv2",
            "head"
        ]
    );
    let convs = plan
        .iter()
        .filter(|p| matches!(p.kind, LayerKind::Conv(s) if s.kernel == 3))
        .count();
    let ups = plan
        .iter()
        .filter(|p| matches!(p.kind, LayerKind::UpConv { .. }))
        .count();
    assert_eq!((convs, ups), (6, 1));
    assert!(matches!(plan[7].kind, LayerKind::Conv(s) if s.kernel == 1 && s.out_channels == 3));
}

#[test]
fn channel_progression() {
    let config = desk(4, 3, 32);
    let plan = layer_plan(&config).unwrap();
    for level in 0..4 {
        let enc = &plan[2 * level];
        assert_eq!(enc.kind.out_channels(), 3 << level);
        let dec = plan.iter().find(|p| p.name == format!("dec{level}.conv1")).unwrap();
        assert_eq!(dec.kind.weight_shape()[1], 2 * (3 << level));
    }
    assert_eq!(plan[8].kind.out_channels(), 48);
    let no_skip = UNetConfig {
        skip_connections: false,
        ..config
    };
    let plan = layer_plan(&no_skip).unwrap();
    let dec = plan.iter().find(|p| p.name == "dec0.conv1").unwrap();
    assert_eq!(dec.kind.weight_shape()[1], 3);
}

#[test]
fn invalid_configs() {
    assert!(matches!(build(&desk(4, 4, 40), 0), Err(Error::Config(_))));
    assert!(build(&desk(0, 4, 8), 0).is_err());
    let four_classes = UNetConfig {
        num_classes: 4,
        ..desk(1, 1, 4)
    };
    assert!(build(&four_classes, 0).is_err());
}

#[test]
fn seeded_build_is_deterministic() {
    let c = desk(2, 4, 16);
    assert_eq!(build(&c, 7).unwrap(), build(&c, 7).unwrap());
    assert_ne!(build(&c, 7).unwrap(), build(&c, 8).unwrap());
    let p = build(&c, 7).unwrap();
    assert!(p.layers().iter().all(|l| l.bias.max_abs() == 0.0));
}

#[test]
fn forward_preserves_spatial_extent() {
    let config = desk(4, 2, 64);
    let params = build(&config, 1).unwrap();
    let x = uniform_tensor(&[1, 1, 64, 64], 0.0, 1.0, &mut seeded_rng(2)).unwrap();
    let (y, cache) = forward(&params, &config, &x).unwrap();
    assert_eq!(y.shape(), &[1, 3, 64, 64]);
    assert_eq!(cache.scores(), &y);
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    let (y2, _) = forward(&params, &config, &x).unwrap();
    assert_eq!(y, y2);
    assert_eq!(predict(&params, &config, &x).unwrap(), y);
}

#[test]
fn softmax_head_normalizes_channels() {
    let config = UNetConfig {
        output_head: OutputHead::Softmax,
        ..desk(2, 2, 8)
    };
    let params = build(&config, 3).unwrap();
    let x = uniform_tensor(&[2, 1, 8, 8], 0.0, 1.0, &mut seeded_rng(4)).unwrap();
    let y = predict(&params, &config, &x).unwrap();
    for p in 0..2 * 64 {
        let (b, px) = (p / 64, p % 64);
        let sum: f64 = (0..3).map(|k| y.data()[(b * 3 + k) * 64 + px]).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}

#[test]
fn forward_rejects_wrong_input() {
    let config = desk(2, 2, 8);
    let params = build(&config, 0).unwrap();
    assert!(predict(&params, &config, &Tensor::zeros(&[1, 1, 16, 16]).unwrap()).is_err());
    assert!(predict(&params, &config, &Tensor::zeros(&[1, 2, 8, 8]).unwrap()).is_err());
    let other = desk(2, 3, 8);
    assert!(predict(&params, &other, &Tensor::zeros(&[1, 1, 8, 8]).unwrap()).is_err());
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let config = desk(2, 2, 8);
    let params = build(&config, 0).unwrap();
    let x = uniform_tensor(&[1, 1, 8, 8], 0.0, 1.0, &mut seeded_rng(1)).unwrap();
    let (y, cache) = forward(&params, &config, &x).unwrap();
    let g = backward(&params, &config, &cache, &Tensor::zeros(y.shape()).unwrap()).unwrap();
    assert!(g.tensors().all(|t| t.max_abs() == 0.0));
    let bad = backward(&params, &config, &cache, &Tensor::zeros(&[1, 3, 4, 4]).unwrap());
    assert!(matches!(bad, Err(Error::Internal(_))));
}

#[test]
fn backward_is_linear_in_upstream_gradient() {
    for head in [OutputHead::Sigmoid, OutputHead::Softmax] {
        let config = UNetConfig {
            output_head: head,
            ..desk(2, 3, 8)
        };
        let params = build(&config, 11).unwrap();
        let mut rng = seeded_rng(12);
        let x = uniform_tensor(&[2, 1, 8, 8], 0.0, 1.0, &mut rng).unwrap();
        let (y, cache) = forward(&params, &config, &x).unwrap();
        let d = uniform_tensor(y.shape(), -1.0, 1.0, &mut rng).unwrap();
        let g1 = backward(&params, &config, &cache, &d).unwrap();
        let g2 = backward(&params, &config, &cache, &d.scale(2.0)).unwrap();
        for (a, b) in g1.tensors().zip(g2.tensors()) {
            assert_eq!(&a.scale(2.0), b);
        }
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for seed in 0..5 {
        let err = grad_check_end_to_end(&desk(1, 2, 8), seed, 20).unwrap();
        assert!(err < 1e-3, "seed {seed}: {err}");
    }
}

#[test]
fn end_to_end_gradients_deeper_and_softmax() {
    let softmax = UNetConfig {
        output_head: OutputHead::Softmax,
        ..desk(2, 2, 8)
    };
    assert!(grad_check_end_to_end(&softmax, 3, 20).unwrap() < 1e-3);
    let no_skip = UNetConfig {
        skip_connections: false,
        ..desk(2, 2, 8)
    };
    assert!(grad_check_end_to_end(&no_skip, 4, 20).unwrap() < 1e-3);
}
