// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::graph::ModelGraph;
use super::kernels::{self, Gate, Io};
use super::layer::LayerSpec;
use super::probe::{KernelId, NoProbe, Probe, Variant};
use crate::error::{arg_err, shape_err, Result};
use crate::tensor::Tensor;

/// Which kernel variant data-dependent layers use.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Leaky,
    Oblivious,
}

impl ExecMode {
    pub fn name(self) -> &'static str {
        match self {
            ExecMode::Leaky => "leaky",
            ExecMode::Oblivious => "oblivious",
        }
    }
}

impl fmt::Display for ExecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExecMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leaky" => Ok(ExecMode::Leaky),
            "oblivious" => Ok(ExecMode::Oblivious),
            _ => arg_err(format!("unknown mode {s:?} (expected leaky or oblivious)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Tensor,
    pub label: usize,
}

/// Runs a graph in one mode.
///
/// `forced_leaky` makes a single layer use its leaky kernel regardless of
/// the mode; it exists to plant a known leak for verifier tests.
#[derive(Clone, Copy, Debug)]
pub struct Executor<'g> {
    graph: &'g ModelGraph,
    mode: ExecMode,
    forced_leaky: Option<usize>,
}

impl<'g> Executor<'g> {
    pub fn new(graph: &'g ModelGraph, mode: ExecMode) -> Self {
        Self {
            graph,
            mode,
            forced_leaky: None,
        }
    }

    pub fn with_forced_leaky(mut self, layer: Option<usize>) -> Self {
        self.forced_leaky = layer;
        self
    }

    pub fn graph(&self) -> &'g ModelGraph {
        self.graph
    }

    pub fn mode(&self) -> ExecMode {
        self.mode
    }

    fn variant(&self, layer: usize, kernel: KernelId) -> Variant {
        if !kernel.is_data_dependent() {
            Variant::Shared
        } else if self.mode == ExecMode::Leaky || self.forced_leaky == Some(layer) {
            Variant::Leaky
        } else {
            Variant::Oblivious
        }
    }

    pub fn run(&self, x: &Tensor) -> Result<Prediction> {
        self.run_probed(x, &mut NoProbe)
    }

    pub fn run_probed<P: Probe>(&self, x: &Tensor, probe: &mut P) -> Result<Prediction> {
        let mut last = Vec::new();
        let label = self.execute(x, probe, |_, out| last = out.to_vec())?;
        let probs = Tensor::new(self.graph.output_shape(self.graph.layers().len() - 1).clone(), last)?;
        Ok(Prediction { probs, label })
    }

    /// Every layer's output in order, plus the label.
    pub fn run_capture(&self, x: &Tensor) -> Result<(Vec<Tensor>, usize)> {
        let g = self.graph;
        let mut outs = Vec::with_capacity(g.layers().len());
        let label = self.execute(x, &mut NoProbe, |i, out| {
            outs.push(Tensor::new(g.output_shape(i).clone(), out.to_vec()).expect("shape chain"))
        })?;
        Ok((outs, label))
    }

    fn execute<P: Probe>(
        &self,
        x: &Tensor,
        p: &mut P,
        mut sink: impl FnMut(usize, &[f32]),
    ) -> Result<usize> {
        let g = self.graph;
        if x.shape() != g.input_shape() {
            return shape_err(format!(
                "input shape {:?} does not match model input {:?}",
                x.shape(),
                g.input_shape()
            ));
        }
        let mut cur = x.data().to_vec();
        let mut label = 0;
        for (i, layer) in g.layers().iter().enumerate() {
            let bufs = g.layer_buffers(i);
            let io = Io {
                input: bufs.input,
                output: bufs.output,
                params: &bufs.params,
            };
            let mut out = vec![0.0f32; g.output_shape(i).numel()];
            let ps = g.params(i);
            let chw = || match *g.input_shape_of(i).dims() {
                [c, h, w] => (c, h, w),
                _ => unreachable!("validated shape chain"),
            };
            match *layer {
                LayerSpec::Dense { .. } => {
                    kernels::dense(&cur, ps[0].data(), ps[1].data(), &mut out, io, p)
                }
                LayerSpec::Conv2d {
                    kernel,
                    stride,
                    padding,
                    ..
                } => kernels::conv2d(
                    &cur,
                    chw(),
                    ps[0].data(),
                    ps[1].data(),
                    kernel,
                    stride,
                    padding,
                    &mut out,
                    io,
                    p,
                ),
                LayerSpec::BatchNorm { eps, .. } => kernels::batchnorm(
                    &cur,
                    ps[0].data(),
                    ps[1].data(),
                    ps[2].data(),
                    ps[3].data(),
                    eps,
                    &mut out,
                    io,
                    p,
                ),
                LayerSpec::Relu => kernels::gated(
                    KernelId::Relu,
                    Gate::Threshold {
                        threshold: 0.0,
                        val: 0.0,
                    },
                    &cur,
                    &mut out,
                    self.variant(i, KernelId::Relu),
                    io,
                    p,
                ),
                LayerSpec::Threshold { threshold, val } => kernels::gated(
                    KernelId::Threshold,
                    Gate::Threshold { threshold, val },
                    &cur,
                    &mut out,
                    self.variant(i, KernelId::Threshold),
                    io,
                    p,
                ),
                LayerSpec::LeakyRelu { negative_slope } => kernels::gated(
                    KernelId::LeakyRelu,
                    Gate::Leaky {
                        slope: negative_slope,
                    },
                    &cur,
                    &mut out,
                    self.variant(i, KernelId::LeakyRelu),
                    io,
                    p,
                ),
                LayerSpec::HardTanh { min_val, max_val } => kernels::hardtanh(
                    min_val,
                    max_val,
                    &cur,
                    &mut out,
                    self.variant(i, KernelId::HardTanh),
                    io,
                    p,
                ),
                LayerSpec::MaxPool2d { window, stride } => kernels::maxpool2d(
                    &cur,
                    chw(),
                    window,
                    stride,
                    &mut out,
                    self.variant(i, KernelId::MaxPool2d),
                    io,
                    p,
                ),
                LayerSpec::MeanPool2d { window, stride } => {
                    kernels::meanpool2d(&cur, chw(), window, stride, &mut out, io, p)
                }
                LayerSpec::Flatten => kernels::flatten(&cur, &mut out, io, p),
                LayerSpec::Softmax => {
                    kernels::softmax(&cur, &mut out, self.variant(i, KernelId::Softmax), io, p);
                    let arg_io = Io {
                        input: bufs.output,
                        output: g.label_buffer(),
                        params: &[],
                    };
                    label = kernels::argmax(&out, self.variant(i, KernelId::Argmax), arg_io, p);
                }
            }
            sink(i, &out);
            cur = out;
        }
        Ok(label)
    }
}

pub fn forward(g: &ModelGraph, x: &Tensor, mode: ExecMode) -> Result<Prediction> {
    Executor::new(g, mode).run(x)
}

pub fn forward_probed<P: Probe>(
    g: &ModelGraph,
    x: &Tensor,
    mode: ExecMode,
    probe: &mut P,
) -> Result<Prediction> {
    Executor::new(g, mode).run_probed(x, probe)
}

/// Runs every item of a batch whose leading dimension indexes examples.
pub fn forward_batch(g: &ModelGraph, xs: &Tensor, mode: ExecMode) -> Result<Vec<Prediction>> {
    let item = g.input_shape().numel();
    let n = xs.dims()[0];
    if xs.dims()[1..] != *g.input_shape().dims() {
        return shape_err(format!(
            "batch {:?} does not hold {:?} inputs",
            xs.dims(),
            g.input_shape()
        ));
    }
    let exec = Executor::new(g, mode);
    (0..n)
        .map(|i| {
            let x = Tensor::new(
                g.input_shape().clone(),
                xs.data()[i * item..(i + 1) * item].to_vec(),
            )?;
            exec.run(&x)
        })
        .collect()
}
