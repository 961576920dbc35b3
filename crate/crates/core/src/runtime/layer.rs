// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::probe::KernelId;
use crate::error::{arg_err, shape_err, Result};
use crate::tensor::Shape;

/// One layer and its (public) hyper-parameters.
///
/// Dense weights are stored input-major, `[in_units, out_units]`. Conv2d
/// weights are `[out_channels, in_channels, kernel, kernel]`. Spatial layers
/// take `[channels, height, width]` inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        in_units: usize,
        out_units: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        channels: usize,
        eps: f32,
    },
    Relu,
    Threshold {
        threshold: f32,
        val: f32,
    },
    HardTanh {
        min_val: f32,
        max_val: f32,
    },
    LeakyRelu {
        negative_slope: f32,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    MeanPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    RunningMean,
    RunningVar,
    Gamma,
    Beta,
}

impl ParamRole {
    pub fn name(self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
            ParamRole::RunningMean => "running_mean",
            ParamRole::RunningVar => "running_var",
            ParamRole::Gamma => "gamma",
            ParamRole::Beta => "beta",
        }
    }
}

pub(crate) fn pool_output(h: usize, w: usize, window: usize, stride: usize) -> Result<(usize, usize)> {
    if h < window || w < window {
        return shape_err(format!("{h}x{w} input smaller than {window}x{window} window"));
    }
    Ok(((h - window) / stride + 1, (w - window) / stride + 1))
}

pub(crate) fn conv_output(
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    let (hp, wp) = (h + 2 * padding, w + 2 * padding);
    if hp < kernel || wp < kernel {
        return shape_err(format!(
            "{h}x{w} input (padding {padding}) smaller than {kernel}x{kernel} kernel"
        ));
    }
    Ok(((hp - kernel) / stride + 1, (wp - kernel) / stride + 1))
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::Threshold { .. } => "threshold",
            LayerSpec::HardTanh { .. } => "hardtanh",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::MeanPool2d { .. } => "meanpool2d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Kernels this layer executes, in call order.
    pub fn kernels(&self) -> &'static [KernelId] {
        match self {
            LayerSpec::Dense { .. } => &[KernelId::Dense],
            LayerSpec::Conv2d { .. } => &[KernelId::Conv2d],
            LayerSpec::BatchNorm { .. } => &[KernelId::BatchNorm],
            LayerSpec::Relu => &[KernelId::Relu],
            LayerSpec::Threshold { .. } => &[KernelId::Threshold],
            LayerSpec::HardTanh { .. } => &[KernelId::HardTanh],
            LayerSpec::LeakyRelu { .. } => &[KernelId::LeakyRelu],
            LayerSpec::MaxPool2d { .. } => &[KernelId::MaxPool2d],
            LayerSpec::MeanPool2d { .. } => &[KernelId::MeanPool2d],
            LayerSpec::Flatten => &[KernelId::Flatten],
            LayerSpec::Softmax => &[KernelId::Softmax, KernelId::Argmax],
        }
    }

    /// For elementwise activations with an assign-or-nothing branch, the kernel running it.
    pub fn activation_kernel(&self) -> Option<KernelId> {
        match self {
            LayerSpec::Relu => Some(KernelId::Relu),
            LayerSpec::Threshold { .. } => Some(KernelId::Threshold),
            LayerSpec::HardTanh { .. } => Some(KernelId::HardTanh),
            LayerSpec::LeakyRelu { .. } => Some(KernelId::LeakyRelu),
            _ => None,
        }
    }

    /// Whether the reference kernel takes its (first) `then` branch for input `x`.
    pub fn branch_taken(&self, x: f32) -> Option<bool> {
        match *self {
            LayerSpec::Relu => Some(x <= 0.0),
            LayerSpec::Threshold { threshold, .. } => Some(x <= threshold),
            LayerSpec::HardTanh { min_val, .. } => Some(x < min_val),
            LayerSpec::LeakyRelu { .. } => Some(x <= 0.0),
            _ => None,
        }
    }

    /// Parameter tensors the layer needs, in canonical order.
    pub fn param_shapes(&self) -> Vec<(ParamRole, Shape)> {
        let s = |d: Vec<usize>| Shape::new(d).expect("validated hyper-parameters");
        match *self {
            LayerSpec::Dense {
                in_units,
                out_units,
            } => vec![
                (ParamRole::Weight, s(vec![in_units, out_units])),
                (ParamRole::Bias, s(vec![out_units])),
            ],
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                (
                    ParamRole::Weight,
                    s(vec![out_channels, in_channels, kernel, kernel]),
                ),
                (ParamRole::Bias, s(vec![out_channels])),
            ],
            LayerSpec::BatchNorm { channels, .. } => vec![
                (ParamRole::RunningMean, s(vec![channels])),
                (ParamRole::RunningVar, s(vec![channels])),
                (ParamRole::Gamma, s(vec![channels])),
                (ParamRole::Beta, s(vec![channels])),
            ],
            _ => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                arg_err(format!("{} {name} must be positive", self.kind_name()))
            } else {
                Ok(())
            }
        };
        match *self {
            LayerSpec::Dense {
                in_units,
                out_units,
            } => {
                positive("in_units", in_units)?;
                positive("out_units", out_units)
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                positive("in_channels", in_channels)?;
                positive("out_channels", out_channels)?;
                positive("kernel", kernel)?;
                positive("stride", stride)
            }
            LayerSpec::BatchNorm { channels, eps } => {
                positive("channels", channels)?;
                if !(eps > 0.0 && eps.is_finite()) {
                    return arg_err(format!("batchnorm eps must be positive, got {eps}"));
                }
                Ok(())
            }
            LayerSpec::Threshold { threshold, val } => {
                if !threshold.is_finite() || !val.is_finite() {
                    return arg_err("threshold parameters must be finite");
                }
                Ok(())
            }
            LayerSpec::HardTanh { min_val, max_val } => {
                if min_val.is_nan() || max_val.is_nan() || min_val > max_val {
                    return arg_err(format!("hardtanh bounds invalid: [{min_val}, {max_val}]"));
                }
                Ok(())
            }
            LayerSpec::LeakyRelu { negative_slope } => {
                if !negative_slope.is_finite() {
                    return arg_err("leaky_relu slope must be finite");
                }
                Ok(())
            }
            LayerSpec::MaxPool2d { window, stride } | LayerSpec::MeanPool2d { window, stride } => {
                positive("window", window)?;
                positive("stride", stride)
            }
            LayerSpec::Relu | LayerSpec::Flatten | LayerSpec::Softmax => Ok(()),
        }
    }

    pub fn output_shape(&self, input: &Shape) -> Result<Shape> {
        self.validate()?;
        let d = input.dims();
        let kind = self.kind_name();
        match *self {
            LayerSpec::Dense {
                in_units,
                out_units,
            } => {
                if d != [in_units] {
                    return shape_err(format!("dense expects [{in_units}], got {input:?}"));
                }
                Shape::new(vec![out_units])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => match *d {
                [c, h, w] if c == in_channels => {
                    let (oh, ow) = conv_output(h, w, kernel, stride, padding)?;
                    Shape::new(vec![out_channels, oh, ow])
                }
                _ => shape_err(format!(
                    "conv2d expects [{in_channels}, H, W], got {input:?}"
                )),
            },
            LayerSpec::BatchNorm { channels, .. } => {
                if d[0] != channels || !(d.len() == 1 || d.len() == 3) {
                    return shape_err(format!(
                        "batchnorm expects [{channels}] or [{channels}, H, W], got {input:?}"
                    ));
                }
                Ok(input.clone())
            }
            LayerSpec::MaxPool2d { window, stride } | LayerSpec::MeanPool2d { window, stride } => {
                match *d {
                    [c, h, w] => {
                        let (oh, ow) = pool_output(h, w, window, stride)?;
                        Shape::new(vec![c, oh, ow])
                    }
                    _ => shape_err(format!("{kind} expects [C, H, W], got {input:?}")),
                }
            }
            LayerSpec::Flatten => Shape::new(vec![input.numel()]),
            LayerSpec::Relu
            | LayerSpec::Threshold { .. }
            | LayerSpec::HardTanh { .. }
            | LayerSpec::LeakyRelu { .. }
            | LayerSpec::Softmax => Ok(input.clone()),
        }
    }
}
