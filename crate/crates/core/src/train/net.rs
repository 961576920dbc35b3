// SPDX-License-Identifier: Apache-2.0

//! Batched forward and backward passes for training.

use crate::error::{arg_err, Error, Result};
use crate::runtime::kernels::{self, Io};
use crate::runtime::{LayerSpec, ModelGraph, NoProbe};
use crate::tensor::{matmul_into, Shape, Tensor};

/// Trainable copy of a graph's layers and parameters.
#[derive(Clone, Debug)]
pub struct Network {
    name: String,
    input: Shape,
    layers: Vec<LayerSpec>,
    /// Input shape of each layer, then the output shape.
    shapes: Vec<Shape>,
    pub(crate) params: Vec<Vec<Vec<f32>>>,
}

/// Activations kept from a forward pass.
pub(crate) struct Tape {
    batch: usize,
    /// `acts[i]` is the input of layer `i`; the last entry holds the probabilities.
    acts: Vec<Vec<f32>>,
    /// Flat input index of every pooled maximum, per max-pool layer.
    argmax: Vec<Vec<usize>>,
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut s = lanes.iter().sum::<f32>();
    for (x, y) in ar.iter().zip(br) {
        s += x * y;
    }
    s
}

fn chw(s: &Shape) -> (usize, usize, usize) {
    match *s.dims() {
        [c, h, w] => (c, h, w),
        _ => unreachable!("validated shape chain"),
    }
}

impl Network {
    pub fn from_graph(g: &ModelGraph) -> Result<Self> {
        let mut shapes = vec![g.input_shape().clone()];
        for (i, l) in g.layers().iter().enumerate() {
            if matches!(l, LayerSpec::BatchNorm { .. }) {
                return arg_err("batch normalisation layers cannot be trained here");
            }
            shapes.push(g.output_shape(i).clone());
        }
        Ok(Self {
            name: g.name().to_string(),
            input: g.input_shape().clone(),
            layers: g.layers().to_vec(),
            shapes,
            params: g
                .all_params()
                .iter()
                .map(|ps| ps.iter().map(|t| t.data().to_vec()).collect())
                .collect(),
        })
    }

    pub fn to_graph(&self) -> Result<ModelGraph> {
        let params = self
            .layers
            .iter()
            .zip(&self.params)
            .map(|(l, ps)| {
                l.param_shapes()
                    .into_iter()
                    .zip(ps)
                    .map(|((_, s), d)| Tensor::new(s, d.clone()))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        ModelGraph::new(self.name.clone(), self.input.clone(), self.layers.clone(), params)
    }

    pub fn input_len(&self) -> usize {
        self.input.numel()
    }

    pub fn classes(&self) -> usize {
        self.shapes.last().expect("non-empty").numel()
    }

    pub(crate) fn forward(&self, x: &[f32], batch: usize) -> Tape {
        let mut acts = vec![x.to_vec()];
        let mut argmax = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let (ins, outs) = (self.shapes[i].numel(), self.shapes[i + 1].numel());
            let cur = &acts[i];
            let mut out = vec![0.0f32; batch * outs];
            let ps = &self.params[i];
            match *layer {
                LayerSpec::Dense { .. } => {
                    matmul_into(cur, &ps[0], &mut out, batch, ins, outs);
                    for row in out.chunks_exact_mut(outs) {
                        for (v, b) in row.iter_mut().zip(&ps[1]) {
                            *v += b;
                        }
                    }
                }
                LayerSpec::Conv2d {
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    let io = Io::DETACHED;
                    for (xb, ob) in cur.chunks_exact(ins).zip(out.chunks_exact_mut(outs)) {
                        kernels::conv2d(
                            xb,
                            chw(&self.shapes[i]),
                            &ps[0],
                            &ps[1],
                            kernel,
                            stride,
                            padding,
                            ob,
                            io,
                            &mut NoProbe,
                        );
                    }
                }
                LayerSpec::MaxPool2d { window, stride } => {
                    let (c, h, w) = chw(&self.shapes[i]);
                    let (_, oh, ow) = chw(&self.shapes[i + 1]);
                    let mut idx = vec![0usize; batch * outs];
                    for b in 0..batch {
                        for ch in 0..c {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let mut best = f32::NEG_INFINITY;
                                    let mut at = 0;
                                    for ky in 0..window {
                                        for kx in 0..window {
                                            let j = b * ins + ch * h * w + (oy * stride + ky) * w + ox * stride + kx;
                                            if cur[j] > best {
                                                best = cur[j];
                                                at = j;
                                            }
                                        }
                                    }
                                    let o = b * outs + (ch * oh + oy) * ow + ox;
                                    out[o] = best;
                                    idx[o] = at;
                                }
                            }
                        }
                    }
                    argmax.push(idx);
                }
                LayerSpec::MeanPool2d { window, stride } => {
                    let io = Io::DETACHED;
                    for (xb, ob) in cur.chunks_exact(ins).zip(out.chunks_exact_mut(outs)) {
                        kernels::meanpool2d(xb, chw(&self.shapes[i]), window, stride, ob, io, &mut NoProbe);
                    }
                }
                LayerSpec::Relu => {
                    for (o, &v) in out.iter_mut().zip(cur) {
                        *o = if v <= 0.0 { 0.0 } else { v };
                    }
                }
                LayerSpec::Threshold { threshold, val } => {
                    for (o, &v) in out.iter_mut().zip(cur) {
                        *o = if v <= threshold { val } else { v };
                    }
                }
                LayerSpec::LeakyRelu { negative_slope } => {
                    for (o, &v) in out.iter_mut().zip(cur) {
                        *o = if v <= 0.0 { v * negative_slope } else { v };
                    }
                }
                LayerSpec::HardTanh { min_val, max_val } => {
                    for (o, &v) in out.iter_mut().zip(cur) {
                        *o = v.clamp(min_val, max_val);
                    }
                }
                LayerSpec::Flatten => out.copy_from_slice(cur),
                LayerSpec::Softmax => {
                    for (xb, ob) in cur.chunks_exact(ins).zip(out.chunks_exact_mut(outs)) {
                        let m = xb.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                        let e: Vec<f64> = xb.iter().map(|&v| ((v - m) as f64).exp()).collect();
                        let s: f64 = e.iter().sum();
                        for (o, v) in ob.iter_mut().zip(&e) {
                            *o = (v / s) as f32;
                        }
                    }
                }
                LayerSpec::BatchNorm { .. } => unreachable!("rejected in from_graph"),
            }
            acts.push(out);
        }
        Tape { batch, acts, argmax }
    }

    /// Mean cross-entropy of a forward pass (computed in `f64`).
    pub(crate) fn loss(&self, tape: &Tape, labels: &[usize]) -> f64 {
        let probs = tape.acts.last().expect("output");
        let k = self.classes();
        labels
            .iter()
            .enumerate()
            .map(|(b, &y)| {
                let p = probs[b * k + y] as f64;
                if p.is_nan() {
                    f64::NAN
                } else {
                    -p.max(1e-30).ln()
                }
            })
            .sum::<f64>()
            / tape.batch as f64
    }

    /// Gradients of the mean cross-entropy, shaped like `params`.
    pub(crate) fn backward(&self, tape: &Tape, labels: &[usize]) -> Vec<Vec<Vec<f32>>> {
        let batch = tape.batch;
        let last = self.layers.len() - 1;
        let k = self.classes();
        let mut grads: Vec<Vec<Vec<f32>>> = self
            .params
            .iter()
            .map(|ps| ps.iter().map(|p| vec![0.0; p.len()]).collect())
            .collect();
        // Softmax and cross-entropy together: (p - onehot) / batch.
        let mut d: Vec<f32> = tape.acts[last + 1].clone();
        for (b, &y) in labels.iter().enumerate() {
            d[b * k + y] -= 1.0;
        }
        let inv = 1.0 / batch as f32;
        d.iter_mut().for_each(|v| *v *= inv);

        let mut pool = tape.argmax.len();
        for i in (0..last).rev() {
            let (ins, outs) = (self.shapes[i].numel(), self.shapes[i + 1].numel());
            let x = &tape.acts[i];
            let need_dx = i > 0;
            let mut dx = vec![0.0f32; if need_dx { batch * ins } else { 0 }];
            let ps = &self.params[i];
            match self.layers[i] {
                LayerSpec::Dense { .. } => {
                    let (gw, gb) = grads[i].split_at_mut(1);
                    let (gw, gb) = (&mut gw[0], &mut gb[0]);
                    for b in 0..batch {
                        let db = &d[b * outs..(b + 1) * outs];
                        for (g, v) in gb.iter_mut().zip(db) {
                            *g += v;
                        }
                        for (p, &xv) in x[b * ins..(b + 1) * ins].iter().enumerate() {
                            if xv != 0.0 {
                                for (g, v) in gw[p * outs..(p + 1) * outs].iter_mut().zip(db) {
                                    *g += xv * v;
                                }
                            }
                        }
                        if need_dx {
                            for p in 0..ins {
                                dx[b * ins + p] = dot(db, &ps[0][p * outs..(p + 1) * outs]);
                            }
                        }
                    }
                }
                LayerSpec::Conv2d {
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    let (c, h, w) = chw(&self.shapes[i]);
                    let (oc_n, oh, ow) = chw(&self.shapes[i + 1]);
                    let fsize = c * kernel * kernel;
                    let (gw, gb) = grads[i].split_at_mut(1);
                    let (gw, gb) = (&mut gw[0], &mut gb[0]);
                    for b in 0..batch {
                        let xb = &x[b * ins..(b + 1) * ins];
                        for oc in 0..oc_n {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let g = d[b * outs + (oc * oh + oy) * ow + ox];
                                    if g == 0.0 {
                                        continue;
                                    }
                                    gb[oc] += g;
                                    for ic in 0..c {
                                        for ky in 0..kernel {
                                            let iy = (oy * stride + ky) as isize - padding as isize;
                                            if iy < 0 || iy >= h as isize {
                                                continue;
                                            }
                                            for kx in 0..kernel {
                                                let ix = (ox * stride + kx) as isize - padding as isize;
                                                if ix < 0 || ix >= w as isize {
                                                    continue;
                                                }
                                                let xi = (ic * h + iy as usize) * w + ix as usize;
                                                let wi = oc * fsize + (ic * kernel + ky) * kernel + kx;
                                                gw[wi] += g * xb[xi];
                                                if need_dx {
                                                    dx[b * ins + xi] += g * ps[0][wi];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                LayerSpec::MaxPool2d { .. } => {
                    pool -= 1;
                    if need_dx {
                        for (o, &at) in tape.argmax[pool].iter().enumerate() {
                            dx[at] += d[o];
                        }
                    }
                }
                LayerSpec::MeanPool2d { window, stride } => {
                    if need_dx {
                        let (c, h, w) = chw(&self.shapes[i]);
                        let (_, oh, ow) = chw(&self.shapes[i + 1]);
                        let area = (window * window) as f32;
                        for b in 0..batch {
                            for ch in 0..c {
                                for oy in 0..oh {
                                    for ox in 0..ow {
                                        let g = d[b * outs + (ch * oh + oy) * ow + ox] / area;
                                        for ky in 0..window {
                                            for kx in 0..window {
                                                dx[b * ins + ch * h * w + (oy * stride + ky) * w + ox * stride + kx] += g;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                LayerSpec::Relu => {
                    if need_dx {
                        for ((o, &v), &g) in dx.iter_mut().zip(x).zip(&d) {
                            *o = if v <= 0.0 { 0.0 } else { g };
                        }
                    }
                }
                LayerSpec::Threshold { threshold, .. } => {
                    if need_dx {
                        for ((o, &v), &g) in dx.iter_mut().zip(x).zip(&d) {
                            *o = if v <= threshold { 0.0 } else { g };
                        }
                    }
                }
                LayerSpec::LeakyRelu { negative_slope } => {
                    if need_dx {
                        for ((o, &v), &g) in dx.iter_mut().zip(x).zip(&d) {
                            *o = if v <= 0.0 { g * negative_slope } else { g };
                        }
                    }
                }
                LayerSpec::HardTanh { min_val, max_val } => {
                    if need_dx {
                        for ((o, &v), &g) in dx.iter_mut().zip(x).zip(&d) {
                            *o = if v < min_val || v > max_val { 0.0 } else { g };
                        }
                    }
                }
                LayerSpec::Flatten => {
                    if need_dx {
                        dx.copy_from_slice(&d);
                    }
                }
                LayerSpec::Softmax | LayerSpec::BatchNorm { .. } => {
                    unreachable!("softmax is last and batch norm is rejected")
                }
            }
            d = dx;
        }
        grads
    }

    /// Loss and gradients for one batch.
    pub fn loss_and_grad(&self, x: &[f32], labels: &[usize]) -> Result<(f64, Vec<Vec<Vec<f32>>>)> {
        let batch = labels.len();
        if batch == 0 || x.len() != batch * self.input_len() {
            return Err(Error::Shape(format!(
                "{} values for a batch of {batch} inputs of {}",
                x.len(),
                self.input_len()
            )));
        }
        let tape = self.forward(x, batch);
        Ok((self.loss(&tape, labels), self.backward(&tape, labels)))
    }

    /// Predicted classes for a batch.
    pub fn predict(&self, x: &[f32], batch: usize) -> Vec<usize> {
        let tape = self.forward(x, batch);
        let k = self.classes();
        tape.acts
            .last()
            .expect("output")
            .chunks_exact(k)
            .map(|p| {
                let mut best = 0;
                for (j, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub(crate) fn predictions_of(&self, tape: &Tape) -> Vec<usize> {
        let k = self.classes();
        tape.acts
            .last()
            .expect("output")
            .chunks_exact(k)
            .map(|p| {
                let mut best = 0;
                for (j, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}
