// SPDX-License-Identifier: Apache-2.0

//! Layer kernels.
//!
//! Data-dependent kernels come in two variants. The leaky one keeps the
//! branch structure of the classic reference code (`<=` for threshold,
//! `<`/`<=` for hardtanh, `>` for running maxima) and only emits the
//! `then` block events when the branch is taken. The oblivious one performs
//! the same arithmetic in the same order but routes every decision through
//! [`crate::obliv`], so its event stream depends on shapes alone.
//!
//! The remaining kernels have input-independent access patterns and a
//! single shared body.

use super::layer::{conv_output, pool_output};
use super::probe::{Block, BufferId, KernelId, NoProbe, Probe, Site, Variant};
use crate::error::{shape_err, Result};
use crate::obliv::{ct_clamp_unchecked, ct_gt, ct_le, ct_max, ct_select};
use crate::tensor::{Shape, Tensor};
use crate::ExecMode;

/// Buffers a kernel call reads and writes.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Io<'a> {
    pub input: BufferId,
    pub output: BufferId,
    pub params: &'a [BufferId],
}

impl Io<'static> {
    /// Placeholder ids for calls made outside a model.
    pub(crate) const DETACHED: Io<'static> = Io {
        input: BufferId(0),
        output: BufferId(1),
        params: &[BufferId(2), BufferId(3), BufferId(4), BufferId(5)],
    };
}

#[inline(always)]
fn site(kernel: KernelId, variant: Variant, block: Block) -> Site {
    Site::new(kernel, variant, block)
}

/// Elementwise assign-or-nothing rule.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Gate {
    /// `if (x <= threshold) x = val`
    Threshold { threshold: f32, val: f32 },
    /// `if (x <= 0) x *= slope`
    Leaky { slope: f32 },
}

impl Gate {
    #[inline(always)]
    fn bound(self) -> f32 {
        match self {
            Gate::Threshold { threshold, .. } => threshold,
            Gate::Leaky { .. } => 0.0,
        }
    }

    #[inline(always)]
    fn assign(self, x: f32) -> f32 {
        match self {
            Gate::Threshold { val, .. } => val,
            Gate::Leaky { slope } => x * slope,
        }
    }
}

pub(crate) fn gated<P: Probe>(
    kernel: KernelId,
    gate: Gate,
    x: &[f32],
    out: &mut [f32],
    variant: Variant,
    io: Io,
    p: &mut P,
) {
    let s = |b| site(kernel, variant, b);
    let bound = gate.bound();
    p.enter(kernel);
    p.exec(s(Block::Entry));
    match variant {
        Variant::Oblivious => {
            for (i, (&v, o)) in x.iter().zip(out.iter_mut()).enumerate() {
                p.exec(s(Block::LoopHead));
                p.read(s(Block::LoopHead), io.input, i, 1);
                *o = ct_select(ct_le(v, bound), gate.assign(v), v);
                p.write(s(Block::LoopHead), io.output, i, 1);
                p.exec(s(Block::Continue));
            }
        }
        _ => {
            for (i, (&v, o)) in x.iter().zip(out.iter_mut()).enumerate() {
                p.exec(s(Block::LoopHead));
                p.read(s(Block::LoopHead), io.input, i, 1);
                *o = v;
                p.write(s(Block::LoopHead), io.output, i, 1);
                if v <= bound {
                    p.exec(s(Block::Then));
                    *o = gate.assign(v);
                    p.write(s(Block::Then), io.output, i, 1);
                }
                p.exec(s(Block::Continue));
            }
        }
    }
    p.exec(s(Block::Exit));
}

/// Out-of-place hardtanh with the three-way branch of the reference kernel.
pub(crate) fn hardtanh<P: Probe>(
    min_val: f32,
    max_val: f32,
    x: &[f32],
    out: &mut [f32],
    variant: Variant,
    io: Io,
    p: &mut P,
) {
    let k = KernelId::HardTanh;
    let s = |b| site(k, variant, b);
    p.enter(k);
    p.exec(s(Block::Entry));
    match variant {
        Variant::Oblivious => {
            for (i, (&v, o)) in x.iter().zip(out.iter_mut()).enumerate() {
                p.exec(s(Block::LoopHead));
                p.read(s(Block::LoopHead), io.input, i, 1);
                *o = ct_clamp_unchecked(v, min_val, max_val);
                p.write(s(Block::LoopHead), io.output, i, 1);
                p.exec(s(Block::Continue));
            }
        }
        _ => {
            for (i, (&v, o)) in x.iter().zip(out.iter_mut()).enumerate() {
                p.exec(s(Block::LoopHead));
                p.read(s(Block::LoopHead), io.input, i, 1);
                if v < min_val {
                    p.exec(s(Block::Then));
                    *o = min_val;
                    p.write(s(Block::Then), io.output, i, 1);
                } else {
                    p.exec(s(Block::ElseIf));
                    if v <= max_val {
                        p.exec(s(Block::Then2));
                        *o = v;
                        p.write(s(Block::Then2), io.output, i, 1);
                    } else {
                        p.exec(s(Block::Else));
                        *o = max_val;
                        p.write(s(Block::Else), io.output, i, 1);
                    }
                }
                p.exec(s(Block::Continue));
            }
        }
    }
    p.exec(s(Block::Exit));
}

/// `[C, H, W]` max pooling. The running maximum starts at `-inf` and is
/// replaced when `val > maxval`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn maxpool2d<P: Probe>(
    x: &[f32],
    (c, h, w): (usize, usize, usize),
    window: usize,
    stride: usize,
    out: &mut [f32],
    variant: Variant,
    io: Io,
    p: &mut P,
) {
    let k = KernelId::MaxPool2d;
    let s = |b| site(k, variant, b);
    let (oh, ow) = pool_output(h, w, window, stride).expect("validated pool shape");
    p.enter(k);
    p.exec(s(Block::Entry));
    let mut o = 0;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut maxval = f32::NEG_INFINITY;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = (oy * stride + ky) * w + ox * stride + kx;
                        p.exec(s(Block::LoopHead));
                        p.read(s(Block::LoopHead), io.input, ch * h * w + idx, 1);
                        let val = plane[idx];
                        if variant == Variant::Oblivious {
                            maxval = ct_max(maxval, val);
                        } else if val > maxval {
                            p.exec(s(Block::Then));
                            maxval = val;
                        }
                        p.exec(s(Block::Continue));
                    }
                }
                p.exec(s(Block::Body));
                out[o] = maxval;
                p.write(s(Block::Body), io.output, o, 1);
                o += 1;
            }
        }
    }
    p.exec(s(Block::Exit));
}

pub(crate) fn meanpool2d<P: Probe>(
    x: &[f32],
    (c, h, w): (usize, usize, usize),
    window: usize,
    stride: usize,
    out: &mut [f32],
    io: Io,
    p: &mut P,
) {
    let k = KernelId::MeanPool2d;
    let s = |b| site(k, Variant::Shared, b);
    let (oh, ow) = pool_output(h, w, window, stride).expect("validated pool shape");
    let area = (window * window) as f32;
    p.enter(k);
    p.exec(s(Block::Entry));
    let mut o = 0;
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                p.exec(s(Block::LoopHead));
                let mut acc = 0.0f32;
                for ky in 0..window {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    p.read(s(Block::LoopHead), io.input, row, window);
                    for kx in 0..window {
                        acc += x[row + kx];
                    }
                }
                out[o] = acc / area;
                p.write(s(Block::LoopHead), io.output, o, 1);
                o += 1;
            }
        }
    }
    p.exec(s(Block::Exit));
}

/// `out = x·W + b` with `W` as `[in, out]`.
pub(crate) fn dense<P: Probe>(x: &[f32], wt: &[f32], b: &[f32], out: &mut [f32], io: Io, p: &mut P) {
    let k = KernelId::Dense;
    let s = |blk| site(k, Variant::Shared, blk);
    let n = out.len();
    p.enter(k);
    p.exec(s(Block::Entry));
    out.fill(0.0);
    for (i, &xi) in x.iter().enumerate() {
        p.exec(s(Block::LoopHead));
        p.read(s(Block::LoopHead), io.input, i, 1);
        p.read(s(Block::LoopHead), io.params[0], i * n, n);
        for (o, &wv) in out.iter_mut().zip(&wt[i * n..(i + 1) * n]) {
            *o += xi * wv;
        }
    }
    p.exec(s(Block::Body));
    p.read(s(Block::Body), io.params[1], 0, n);
    for (o, &bv) in out.iter_mut().zip(b) {
        *o += bv;
    }
    p.write(s(Block::Body), io.output, 0, n);
    p.exec(s(Block::Exit));
}

/// Direct convolution, loops `oc, oy, ox, ic, ky, kx`; padding taps are skipped.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d<P: Probe>(
    x: &[f32],
    (c, h, w): (usize, usize, usize),
    wt: &[f32],
    b: &[f32],
    kernel: usize,
    stride: usize,
    padding: usize,
    out: &mut [f32],
    io: Io,
    p: &mut P,
) {
    let k = KernelId::Conv2d;
    let s = |blk| site(k, Variant::Shared, blk);
    let (oh, ow) = conv_output(h, w, kernel, stride, padding).expect("validated conv shape");
    let oc_n = b.len();
    let fsize = c * kernel * kernel;
    p.enter(k);
    p.exec(s(Block::Entry));
    let mut o = 0;
    for oc in 0..oc_n {
        let filt = &wt[oc * fsize..(oc + 1) * fsize];
        for oy in 0..oh {
            for ox in 0..ow {
                p.exec(s(Block::LoopHead));
                p.read(s(Block::LoopHead), io.params[0], oc * fsize, fsize);
                let mut acc = 0.0f32;
                let iy0 = (oy * stride) as isize - padding as isize;
                let ix0 = (ox * stride) as isize - padding as isize;
                let kx_lo = (-ix0).max(0) as usize;
                let kx_hi = ((w as isize - ix0).min(kernel as isize)).max(0) as usize;
                for ic in 0..c {
                    for ky in 0..kernel {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize || kx_lo >= kx_hi {
                            continue;
                        }
                        let row = ic * h * w + iy as usize * w;
                        let start = (ix0 + kx_lo as isize) as usize;
                        p.read(s(Block::LoopHead), io.input, row + start, kx_hi - kx_lo);
                        let wrow = &filt[(ic * kernel + ky) * kernel..][..kernel];
                        for kx in kx_lo..kx_hi {
                            acc += wrow[kx] * x[row + (ix0 + kx as isize) as usize];
                        }
                    }
                }
                p.read(s(Block::LoopHead), io.params[1], oc, 1);
                out[o] = acc + b[oc];
                p.write(s(Block::LoopHead), io.output, o, 1);
                o += 1;
            }
        }
    }
    p.exec(s(Block::Exit));
}

/// Inference batch normalisation over the leading (channel) axis.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm<P: Probe>(
    x: &[f32],
    mean: &[f32],
    var: &[f32],
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
    out: &mut [f32],
    io: Io,
    p: &mut P,
) {
    let k = KernelId::BatchNorm;
    let s = |blk| site(k, Variant::Shared, blk);
    let c = mean.len();
    let hw = x.len() / c;
    p.enter(k);
    p.exec(s(Block::Entry));
    for ch in 0..c {
        p.exec(s(Block::LoopHead));
        for &buf in io.params {
            p.read(s(Block::LoopHead), buf, ch, 1);
        }
        p.read(s(Block::LoopHead), io.input, ch * hw, hw);
        let denom = (var[ch] + eps).sqrt();
        for i in ch * hw..(ch + 1) * hw {
            out[i] = (x[i] - mean[ch]) / denom * gamma[ch] + beta[ch];
        }
        p.write(s(Block::LoopHead), io.output, ch * hw, hw);
    }
    p.exec(s(Block::Exit));
}

pub(crate) fn flatten<P: Probe>(x: &[f32], out: &mut [f32], io: Io, p: &mut P) {
    let k = KernelId::Flatten;
    let s = |blk| site(k, Variant::Shared, blk);
    p.enter(k);
    p.exec(s(Block::Entry));
    p.exec(s(Block::Body));
    p.read(s(Block::Body), io.input, 0, x.len());
    out.copy_from_slice(x);
    p.write(s(Block::Body), io.output, 0, out.len());
    p.exec(s(Block::Exit));
}

/// Max-subtracted softmax. The running max is found by a sequential scan
/// (the only data-dependent part); exponentials and the normaliser are
/// evaluated in `f64` in index order.
pub(crate) fn softmax<P: Probe>(x: &[f32], out: &mut [f32], variant: Variant, io: Io, p: &mut P) {
    let k = KernelId::Softmax;
    let s = |blk| site(k, variant, blk);
    p.enter(k);
    p.exec(s(Block::Entry));
    let mut m = f32::NEG_INFINITY;
    for (i, &v) in x.iter().enumerate() {
        p.exec(s(Block::LoopHead));
        p.read(s(Block::LoopHead), io.input, i, 1);
        if variant == Variant::Oblivious {
            m = ct_max(m, v);
        } else if v > m {
            p.exec(s(Block::Then));
            m = v;
        }
        p.exec(s(Block::Continue));
    }
    p.exec(s(Block::Body));
    p.read(s(Block::Body), io.input, 0, x.len());
    let mut sum = 0.0f64;
    for (o, &v) in out.iter_mut().zip(x) {
        let e = ((v - m) as f64).exp();
        *o = e as f32;
        sum += e;
    }
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (((v - m) as f64).exp() / sum) as f32;
    }
    p.write(s(Block::Body), io.output, 0, out.len());
    p.exec(s(Block::Exit));
}

/// First index of the maximum. `io.input` is the scanned buffer and
/// `io.output` the label cell.
pub(crate) fn argmax<P: Probe>(v: &[f32], variant: Variant, io: Io, p: &mut P) -> usize {
    let k = KernelId::Argmax;
    let s = |blk| site(k, variant, blk);
    p.enter(k);
    p.exec(s(Block::Entry));
    let mut best = f32::NEG_INFINITY;
    let mut idx = 0usize;
    for (i, &x) in v.iter().enumerate() {
        p.exec(s(Block::LoopHead));
        p.read(s(Block::LoopHead), io.input, i, 1);
        if variant == Variant::Oblivious {
            let take = ct_gt(x, best);
            best = ct_select(take, x, best);
            idx = ct_select(take, i, idx);
        } else if x > best {
            p.exec(s(Block::Then));
            best = x;
            idx = i;
        }
        p.exec(s(Block::Continue));
    }
    p.exec(s(Block::Body));
    p.write(s(Block::Body), io.output, 0, 1);
    p.exec(s(Block::Exit));
    idx
}

fn variant_of(mode: ExecMode) -> Variant {
    match mode {
        ExecMode::Leaky => Variant::Leaky,
        ExecMode::Oblivious => Variant::Oblivious,
    }
}

fn spatial(x: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *x.dims() {
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        ref d => shape_err(format!("{what} expects [H, W] or [C, H, W], got {d:?}")),
    }
}

fn pooled_shape(x: &Tensor, oh: usize, ow: usize) -> Result<Shape> {
    match *x.dims() {
        [_, _] => Shape::new(vec![oh, ow]),
        [c, _, _] => Shape::new(vec![c, oh, ow]),
        _ => unreachable!("checked by spatial()"),
    }
}

/// Threshold activation: `out[i] = val` where `x[i] <= threshold`, else `x[i]`.
/// ReLU is `threshold = val = 0`.
pub fn relu_forward(x: &Tensor, threshold: f32, val: f32, mode: ExecMode) -> Tensor {
    let mut out = vec![0.0; x.len()];
    gated(
        KernelId::Threshold,
        Gate::Threshold { threshold, val },
        x.data(),
        &mut out,
        variant_of(mode),
        Io::DETACHED,
        &mut NoProbe,
    );
    Tensor::new(x.shape().clone(), out).expect("same shape")
}

pub fn leaky_relu_forward(x: &Tensor, negative_slope: f32, mode: ExecMode) -> Tensor {
    let mut out = vec![0.0; x.len()];
    gated(
        KernelId::LeakyRelu,
        Gate::Leaky {
            slope: negative_slope,
        },
        x.data(),
        &mut out,
        variant_of(mode),
        Io::DETACHED,
        &mut NoProbe,
    );
    Tensor::new(x.shape().clone(), out).expect("same shape")
}

pub fn hardtanh_forward(x: &Tensor, min_val: f32, max_val: f32, mode: ExecMode) -> Result<Tensor> {
    if min_val > max_val {
        return Err(crate::Error::Argument(format!(
            "hardtanh bounds inverted: {min_val} > {max_val}"
        )));
    }
    let mut out = vec![0.0; x.len()];
    hardtanh(
        min_val,
        max_val,
        x.data(),
        &mut out,
        variant_of(mode),
        Io::DETACHED,
        &mut NoProbe,
    );
    Tensor::new(x.shape().clone(), out)
}

/// Accepts `[H, W]` or `[C, H, W]`; the output keeps the input's rank.
pub fn maxpool2d_forward(x: &Tensor, window: usize, stride: usize, mode: ExecMode) -> Result<Tensor> {
    let (c, h, w) = spatial(x, "maxpool2d")?;
    if window == 0 || stride == 0 {
        return Err(crate::Error::Argument("window and stride must be positive".into()));
    }
    let (oh, ow) = pool_output(h, w, window, stride)?;
    let mut out = vec![0.0; c * oh * ow];
    maxpool2d(
        x.data(),
        (c, h, w),
        window,
        stride,
        &mut out,
        variant_of(mode),
        Io::DETACHED,
        &mut NoProbe,
    );
    Tensor::new(pooled_shape(x, oh, ow)?, out)
}

pub fn meanpool2d_forward(x: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w) = spatial(x, "meanpool2d")?;
    if window == 0 || stride == 0 {
        return Err(crate::Error::Argument("window and stride must be positive".into()));
    }
    let (oh, ow) = pool_output(h, w, window, stride)?;
    let mut out = vec![0.0; c * oh * ow];
    meanpool2d(
        x.data(),
        (c, h, w),
        window,
        stride,
        &mut out,
        Io::DETACHED,
        &mut NoProbe,
    );
    Tensor::new(pooled_shape(x, oh, ow)?, out)
}

/// `x: [C, H, W]`, `w: [OC, C, K, K]`, `b: [OC]` → `[OC, OH, OW]`.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let [c, h, wd] = *x.dims() else {
        return shape_err(format!("conv2d input must be [C, H, W], got {:?}", x.dims()));
    };
    let [oc, wc, k, k2] = *w.dims() else {
        return shape_err(format!("conv2d weight must be [OC, C, K, K], got {:?}", w.dims()));
    };
    if wc != c || k != k2 {
        return shape_err(format!("weight {:?} does not fit input {:?}", w.dims(), x.dims()));
    }
    if b.dims() != [oc] {
        return shape_err(format!("bias must be [{oc}], got {:?}", b.dims()));
    }
    if stride == 0 {
        return Err(crate::Error::Argument("stride must be positive".into()));
    }
    let (oh, ow) = conv_output(h, wd, k, stride, padding)?;
    let mut out = vec![0.0; oc * oh * ow];
    conv2d(
        x.data(),
        (c, h, wd),
        w.data(),
        b.data(),
        k,
        stride,
        padding,
        &mut out,
        Io::DETACHED,
        &mut NoProbe,
    );
    Tensor::from_dims(&[oc, oh, ow], out)
}

/// Normalises channel `c = index along axis 0` with its running statistics.
pub fn batchnorm_forward(
    x: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
) -> Result<Tensor> {
    let c = x.dims()[0];
    for (name, t) in [("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)] {
        if t.dims() != [c] {
            return shape_err(format!("batchnorm {name} must be [{c}], got {:?}", t.dims()));
        }
    }
    if var.data().iter().any(|&v| v < 0.0) {
        return Err(crate::Error::Argument("batchnorm variance must be non-negative".into()));
    }
    let mut out = vec![0.0; x.len()];
    batchnorm(
        x.data(),
        mean.data(),
        var.data(),
        gamma.data(),
        beta.data(),
        eps,
        &mut out,
        Io::DETACHED,
        &mut NoProbe,
    );
    Tensor::new(x.shape().clone(), out)
}

/// Softmax over all elements of `x`.
pub fn softmax_forward(x: &Tensor, mode: ExecMode) -> Tensor {
    let mut out = vec![0.0; x.len()];
    softmax(x.data(), &mut out, variant_of(mode), Io::DETACHED, &mut NoProbe);
    Tensor::new(x.shape().clone(), out).expect("same shape")
}
