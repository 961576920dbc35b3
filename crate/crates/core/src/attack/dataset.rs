// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write as _;

use super::features::{BranchFeatureVector, FeatureExtractor, LayerSelector};
use crate::channel::{coarsen_events, Granularity, MemoryLayout, TraceRecorder};
use crate::error::{arg_err, Error, Result};
use crate::runtime::{ExecMode, Executor, ModelGraph};
use crate::tensor::Tensor;

/// Feature vectors paired with the labels the service returned.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttackDataset {
    pub features: Vec<BranchFeatureVector>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl AttackDataset {
    pub fn new(features: Vec<BranchFeatureVector>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return arg_err(format!("{} feature rows but {} labels", features.len(), labels.len()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return arg_err(format!("label {l} out of range for {classes} classes"));
        }
        if let Some(f) = features.first() {
            if features.iter().any(|g| g.len() != f.len()) {
                return arg_err("feature rows differ in length");
            }
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.first().map_or(0, |f| f.len())
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn head(&self, n: usize) -> Self {
        Self {
            features: self.features[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// `label,bit_0,...,bit_{n-1}`, preceded by a `#` comment when given.
    pub fn to_csv(&self, comment: &str) -> String {
        let mut s = String::new();
        if !comment.is_empty() {
            let _ = writeln!(s, "# {comment}");
        }
        s.push_str("label");
        for i in 0..self.width() {
            let _ = write!(s, ",bit_{i}");
        }
        s.push('\n');
        for (f, l) in self.features.iter().zip(&self.labels) {
            let _ = write!(s, "{l}");
            for b in &f.bits {
                s.push(',');
                s.push(if *b == 1 { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str, classes: usize) -> Result<Self> {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut header = false;
        for (n, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            if !header {
                header = true;
                continue;
            }
            let mut cells = line.split(',');
            let bad = || Error::Parse(format!("feature csv line {}: {line:?}", n + 1));
            let label = cells.next().and_then(|c| c.trim().parse().ok()).ok_or_else(bad)?;
            let bits = cells
                .map(|c| match c.trim() {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    _ => Err(bad()),
                })
                .collect::<Result<_>>()?;
            labels.push(label);
            features.push(BranchFeatureVector { bits });
        }
        Self::new(features, labels, classes)
    }
}

/// Traces every input in `mode` and extracts features at `granularity`.
/// Rows are labelled with the model's own prediction.
pub fn collect_features(
    g: &ModelGraph,
    layout: &MemoryLayout,
    inputs: impl IntoIterator<Item = Tensor>,
    mode: ExecMode,
    granularity: Granularity,
    sel: LayerSelector,
) -> Result<AttackDataset> {
    let ex = FeatureExtractor::new(g, layout, granularity, sel)?;
    let exec = Executor::new(g, mode);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for x in inputs {
        let mut rec = TraceRecorder::new(layout);
        let pred = exec.run_probed(&x, &mut rec)?;
        let obs = coarsen_events(rec.events(), granularity);
        features.push(ex.extract_observations(&obs)?);
        labels.push(pred.label);
    }
    if labels.is_empty() {
        return arg_err("no inputs to build a dataset from");
    }
    AttackDataset::new(features, labels, g.num_classes())
}

/// The attacker's profiling step: leaky traces of inputs it chose itself.
pub fn build_dataset(
    g: &ModelGraph,
    layout: &MemoryLayout,
    inputs: impl IntoIterator<Item = Tensor>,
    granularity: Granularity,
    sel: LayerSelector,
) -> Result<AttackDataset> {
    collect_features(g, layout, inputs, ExecMode::Leaky, granularity, sel)
}
