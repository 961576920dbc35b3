// SPDX-License-Identifier: Apache-2.0

//! Trace-equivalence sweep over random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layout::{layout_assign, MemoryLayout};
use super::trace::{coarsen_events, trace_equal, AccessTrace, Granularity, SiteDiff, TraceEquality, TraceRecorder};
use crate::error::{arg_err, Result};
use crate::runtime::{Block, ExecMode, Executor, KernelId, ModelGraph, Prediction, Site, Variant};
use crate::tensor::Tensor;

/// Runs one traced forward pass.
pub fn trace_forward(
    g: &ModelGraph,
    layout: &MemoryLayout,
    x: &Tensor,
    mode: ExecMode,
) -> Result<(AccessTrace, Prediction)> {
    trace_with(Executor::new(g, mode), layout, x)
}

pub fn trace_with(exec: Executor<'_>, layout: &MemoryLayout, x: &Tensor) -> Result<(AccessTrace, Prediction)> {
    let mut rec = TraceRecorder::new(layout);
    let pred = exec.run_probed(x, &mut rec)?;
    Ok((rec.finish(exec.graph().name(), exec.mode()), pred))
}

/// Leaky sites whose execution depends on the data: every block of a
/// data-dependent kernel that is not entry, loop head, join, body or exit.
pub fn branch_sites(g: &ModelGraph) -> Vec<u32> {
    let fixed = [Block::Entry, Block::LoopHead, Block::Continue, Block::Body, Block::Exit];
    let mut out: Vec<u32> = crate::runtime::kernel_manifest(g)
        .required
        .into_iter()
        .filter(|k| k.is_data_dependent())
        .flat_map(|k| {
            k.blocks(Variant::Leaky)
                .iter()
                .filter(|b| !fixed.contains(b))
                .map(move |&b| Site::new(k, Variant::Leaky, b).id())
        })
        .collect();
    out.sort_unstable();
    out
}

pub fn random_input(g: &ModelGraph, rng: &mut ChaCha8Rng) -> Tensor {
    let n = g.input_shape().numel();
    let data: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Tensor::new(g.input_shape().clone(), data).expect("input shape")
}

#[derive(Clone, Debug)]
pub struct VerifyConfig {
    pub inputs: usize,
    pub seed: u64,
    pub compact: bool,
    /// Layer forced onto its leaky kernel during the oblivious runs.
    pub inject_leaky_layer: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObliviousDivergence {
    pub input: usize,
    pub event: usize,
    pub site: Option<u32>,
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub model: String,
    pub inputs: usize,
    pub fingerprint: String,
    pub oblivious_divergence: Option<ObliviousDivergence>,
    pub leaky_sites: Vec<u32>,
    pub known_sites: Vec<u32>,
}

impl VerifyReport {
    pub fn oblivious_identical(&self) -> bool {
        self.oblivious_divergence.is_none()
    }

    /// Leaky divergence at one or more known sites.
    pub fn leak_detected(&self) -> bool {
        self.leaky_sites.iter().any(|s| self.known_sites.contains(s))
    }

    pub fn passed(&self) -> bool {
        self.oblivious_identical() && self.leak_detected()
    }
}

/// Traces `cfg.inputs` random inputs in both modes. Oblivious traces are
/// compared at full granularity against the first; leaky traces are
/// diffed site by site.
pub fn verify(g: &ModelGraph, cfg: &VerifyConfig) -> Result<VerifyReport> {
    if cfg.inputs < 2 {
        return arg_err("verification needs at least two inputs");
    }
    if let Some(l) = cfg.inject_leaky_layer {
        if l >= g.layers().len() {
            return arg_err(format!("layer {l} out of range"));
        }
    }
    let layout = layout_assign(g, cfg.compact);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let obl = Executor::new(g, ExecMode::Oblivious).with_forced_leaky(cfg.inject_leaky_layer);
    let leaky = Executor::new(g, ExecMode::Leaky);

    let mut reference = None;
    let mut divergence = None;
    let mut diff: Option<SiteDiff> = None;
    for i in 0..cfg.inputs {
        let x = random_input(g, &mut rng);
        let (t, _) = trace_with(obl, &layout, &x)?;
        let c = super::trace::ChannelTrace {
            granularity: Granularity::Full,
            fingerprint: t.fingerprint,
            observations: coarsen_events(&t.events, Granularity::Full),
        };
        match &reference {
            None => reference = Some(c),
            Some(r) => {
                if divergence.is_none() {
                    if let TraceEquality::Diverged { index, left, right } = trace_equal(r, &c)? {
                        divergence = Some(ObliviousDivergence {
                            input: i,
                            event: index,
                            site: right.or(left).and_then(|o| o.site),
                        });
                    }
                }
            }
        }
        let (lt, _) = trace_with(leaky, &layout, &x)?;
        match diff.as_mut() {
            None => diff = Some(SiteDiff::new(&lt)),
            Some(d) => d.add(&lt)?,
        }
    }
    Ok(VerifyReport {
        model: g.name().to_string(),
        inputs: cfg.inputs,
        fingerprint: layout.fingerprint_hex(),
        oblivious_divergence: divergence,
        leaky_sites: diff.expect("at least two inputs").finish()?,
        known_sites: branch_sites(g),
    })
}

/// Human-readable name of a packed site id.
pub fn site_name(id: u32) -> String {
    Site::from_id(id).map_or_else(|| format!("{id:#x}"), |s| s.to_string())
}

/// Kernels whose leaky variant is exercised by a graph.
pub fn leaky_kernels(g: &ModelGraph) -> Vec<KernelId> {
    crate::runtime::kernel_manifest(g)
        .required
        .into_iter()
        .filter(|k| k.is_data_dependent())
        .collect()
}
