// SPDX-License-Identifier: Apache-2.0

//! Stock architectures with freshly initialised parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, Result};
use crate::runtime::{LayerSpec, ModelGraph, ParamRole};
use crate::tensor::{Shape, Tensor};

/// He-uniform weights, zero biases, identity batch-norm statistics.
pub fn init_params(layers: &[LayerSpec], rng: &mut ChaCha8Rng) -> Vec<Vec<Tensor>> {
    layers
        .iter()
        .map(|l| {
            let fan_in = match *l {
                LayerSpec::Dense { in_units, .. } => in_units,
                LayerSpec::Conv2d {
                    in_channels, kernel, ..
                } => in_channels * kernel * kernel,
                _ => 1,
            };
            let bound = (6.0 / fan_in as f32).sqrt();
            l.param_shapes()
                .into_iter()
                .map(|(role, shape)| {
                    let n = shape.numel();
                    let data = match role {
                        ParamRole::Weight => (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
                        ParamRole::RunningVar | ParamRole::Gamma => vec![1.0; n],
                        _ => vec![0.0; n],
                    };
                    Tensor::new(shape, data).expect("shape from spec")
                })
                .collect()
        })
        .collect()
}

fn build(name: &str, input: Vec<usize>, layers: Vec<LayerSpec>, seed: u64) -> Result<ModelGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_params(&layers, &mut rng);
    ModelGraph::new(name, Shape::new(input)?, layers, params)
}

/// Dense/ReLU stack over `widths` (input width first, class count last).
pub fn mlp_layers(widths: &[usize]) -> Result<Vec<LayerSpec>> {
    if widths.len() < 2 {
        return arg_err("an MLP needs at least an input and an output width");
    }
    let mut layers = Vec::new();
    for (i, pair) in widths.windows(2).enumerate() {
        layers.push(LayerSpec::Dense {
            in_units: pair[0],
            out_units: pair[1],
        });
        if i + 2 < widths.len() {
            layers.push(LayerSpec::Relu);
        }
    }
    layers.push(LayerSpec::Softmax);
    Ok(layers)
}

pub fn mlp(widths: &[usize], seed: u64) -> Result<ModelGraph> {
    build("mlp", vec![widths[0]], mlp_layers(widths)?, seed)
}

/// Three convolutions and two dense layers over `[channels, 32, 32]`.
pub fn lenet_layers(channels: usize) -> Vec<LayerSpec> {
    let conv = |i, o| LayerSpec::Conv2d {
        in_channels: i,
        out_channels: o,
        kernel: 5,
        stride: 1,
        padding: 0,
    };
    let pool = LayerSpec::MaxPool2d { window: 2, stride: 2 };
    vec![
        conv(channels, 6),
        LayerSpec::Relu,
        pool.clone(),
        conv(6, 16),
        LayerSpec::Relu,
        pool,
        conv(16, 120),
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            in_units: 120,
            out_units: 84,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            in_units: 84,
            out_units: 10,
        },
        LayerSpec::Softmax,
    ]
}

pub fn lenet(seed: u64) -> Result<ModelGraph> {
    build("lenet", vec![3, 32, 32], lenet_layers(3), seed)
}

/// Small network exercising every layer kind.
pub fn mixed(seed: u64) -> Result<ModelGraph> {
    let layers = vec![
        LayerSpec::Conv2d {
            in_channels: 2,
            out_channels: 4,
            kernel: 3,
            stride: 1,
            padding: 1,
        },
        LayerSpec::BatchNorm {
            channels: 4,
            eps: 1e-5,
        },
        LayerSpec::Threshold {
            threshold: 0.1,
            val: -0.5,
        },
        LayerSpec::MaxPool2d { window: 2, stride: 2 },
        LayerSpec::HardTanh {
            min_val: -0.5,
            max_val: 0.5,
        },
        LayerSpec::MeanPool2d { window: 2, stride: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense {
            in_units: 16,
            out_units: 12,
        },
        LayerSpec::LeakyRelu {
            negative_slope: 0.01,
        },
        LayerSpec::Dense {
            in_units: 12,
            out_units: 6,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            in_units: 6,
            out_units: 5,
        },
        LayerSpec::Softmax,
    ];
    build("mixed", vec![2, 8, 8], layers, seed)
}

/// Looks up a stock model by name: `mlp`, `mlp-small`, `lenet` or `mixed`.
pub fn by_name(name: &str, seed: u64) -> Result<ModelGraph> {
    match name {
        "mlp" => mlp(&[784, 256, 128, 10], seed),
        "mlp-small" => mlp(&[64, 32, 16, 10], seed).map(|g| g.renamed("mlp-small")),
        "lenet" => lenet(seed),
        "mixed" => mixed(seed),
        _ => arg_err(format!("unknown model {name:?}")),
    }
}

pub const NAMES: [&str; 4] = ["mlp", "mlp-small", "lenet", "mixed"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet_has_three_convs_and_two_dense() {
        let g = lenet(0).unwrap();
        let convs = g.layers().iter().filter(|l| matches!(l, LayerSpec::Conv2d { .. })).count();
        let dense = g.layers().iter().filter(|l| matches!(l, LayerSpec::Dense { .. })).count();
        assert_eq!((convs, dense), (3, 2));
        assert_eq!(g.num_classes(), 10);
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(mlp(&[8, 4, 2], 3).unwrap().all_params(), mlp(&[8, 4, 2], 3).unwrap().all_params());
        assert_ne!(mlp(&[8, 4, 2], 3).unwrap().all_params(), mlp(&[8, 4, 2], 4).unwrap().all_params());
        for n in NAMES {
            by_name(n, 0).unwrap();
        }
        assert!(by_name("resnet", 0).is_err());
    }
}
