// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::channel::{ChannelTrace, Granularity, MemoryLayout, Observation};
use crate::error::{arg_err, Error, Result};
use crate::runtime::{ActivationLayer, Block, ExecMode, Executor, KernelId, ModelGraph, Site, Variant};
use crate::tensor::Tensor;

/// Which activation layers contribute feature bits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum LayerSelector {
    LastLayer,
    LastTwoLayers,
    All,
}

impl LayerSelector {
    pub fn name(self) -> &'static str {
        match self {
            LayerSelector::LastLayer => "last",
            LayerSelector::LastTwoLayers => "last2",
            LayerSelector::All => "all",
        }
    }

    /// Indices into `acts` covered by this selector.
    pub fn select(self, acts: &[ActivationLayer]) -> Result<Range<usize>> {
        let n = acts.len();
        let want = match self {
            LayerSelector::LastLayer => 1,
            LayerSelector::LastTwoLayers => 2,
            LayerSelector::All => n.max(1),
        };
        if n < want {
            return arg_err(format!(
                "selector {} needs {want} activation layers, model has {n}",
                self.name()
            ));
        }
        Ok(n - want..n)
    }
}

impl fmt::Display for LayerSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(LayerSelector::LastLayer),
            "last2" => Ok(LayerSelector::LastTwoLayers),
            "all" => Ok(LayerSelector::All),
            _ => arg_err(format!("unknown selector {s:?} (last, last2, all)")),
        }
    }
}

/// One bit per neuron: 1 iff the activation's `then` branch ran.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BranchFeatureVector {
    pub bits: Vec<u8>,
}

impl BranchFeatureVector {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Marker {
    Head(KernelId),
    Then(KernelId),
}

/// Turns channel traces of one model and layout into feature vectors.
///
/// The activation layers of the model (public structure) fix how many
/// loop iterations to expect and of which kernel. Each observation of an
/// activation kernel's loop-head block opens the next neuron's segment; an
/// observation of its `then` block inside the segment sets that neuron's bit.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    granularity: Granularity,
    fingerprint: [u8; 32],
    markers: HashMap<Observation, Marker>,
    /// Expected kernel of every segment, in order.
    segments: Vec<KernelId>,
    selected: Range<usize>,
}

impl FeatureExtractor {
    pub fn new(
        g: &ModelGraph,
        layout: &MemoryLayout,
        granularity: Granularity,
        sel: LayerSelector,
    ) -> Result<Self> {
        let acts = g.activation_layers();
        let chosen = sel.select(&acts)?;
        let mut markers = HashMap::new();
        let mut put = |site: Site, m: Marker| -> Result<()> {
            let addr = layout
                .code_addr(site)
                .ok_or_else(|| Error::Extraction(format!("{site} missing from layout")))?;
            let o = granularity.observe(site.id(), addr);
            match markers.insert(o, m) {
                Some(prev) if prev != m => Err(Error::Extraction(format!(
                    "{site} is indistinguishable from another marker at {granularity} granularity"
                ))),
                _ => Ok(()),
            }
        };
        for a in &acts {
            for v in [Variant::Leaky, Variant::Oblivious] {
                put(Site::new(a.kernel, v, Block::LoopHead), Marker::Head(a.kernel))?;
            }
            put(Site::new(a.kernel, Variant::Leaky, Block::Then), Marker::Then(a.kernel))?;
        }
        let start: usize = acts[..chosen.start].iter().map(|a| a.width).sum();
        let len: usize = acts[chosen].iter().map(|a| a.width).sum();
        let segments = acts
            .iter()
            .flat_map(|a| std::iter::repeat_n(a.kernel, a.width))
            .collect();
        Ok(Self {
            granularity,
            fingerprint: layout.fingerprint(),
            markers,
            segments,
            selected: start..start + len,
        })
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    /// Number of bits produced per trace.
    pub fn width(&self) -> usize {
        self.selected.len()
    }

    pub fn extract(&self, t: &ChannelTrace) -> Result<BranchFeatureVector> {
        if t.granularity != self.granularity {
            return Err(Error::Extraction(format!(
                "trace is at {} granularity, extractor expects {}",
                t.granularity, self.granularity
            )));
        }
        if t.fingerprint != self.fingerprint {
            return Err(Error::Extraction("trace was recorded under a different layout".into()));
        }
        self.extract_observations(&t.observations)
    }

    pub fn extract_observations(&self, obs: &[Observation]) -> Result<BranchFeatureVector> {
        let total = self.segments.len();
        let mut bits = vec![0u8; total];
        let mut seg: Option<usize> = None;
        for o in obs {
            match self.markers.get(o) {
                Some(&Marker::Head(k)) => {
                    let next = seg.map_or(0, |s| s + 1);
                    if next >= total || self.segments[next] != k {
                        return Err(Error::Extraction(format!(
                            "unexpected {k} loop iteration (segment {next} of {total})"
                        )));
                    }
                    seg = Some(next);
                }
                Some(&Marker::Then(k)) => {
                    if let Some(s) = seg {
                        if self.segments[s] == k {
                            bits[s] = 1;
                        }
                    }
                }
                None => {}
            }
        }
        let found = seg.map_or(0, |s| s + 1);
        if found != total {
            return Err(Error::Extraction(format!(
                "found {found} activation segments, expected {total}"
            )));
        }
        Ok(BranchFeatureVector {
            bits: bits[self.selected.clone()].to_vec(),
        })
    }
}

pub fn extract_features(
    t: &ChannelTrace,
    g: &ModelGraph,
    layout: &MemoryLayout,
    sel: LayerSelector,
) -> Result<BranchFeatureVector> {
    FeatureExtractor::new(g, layout, t.granularity, sel)?.extract(t)
}

/// Ground truth from a white-box forward pass: bit = 1 iff the selected
/// activation's branch condition holds for its input.
pub fn sign_oracle(g: &ModelGraph, x: &Tensor, sel: LayerSelector) -> Result<BranchFeatureVector> {
    let acts = g.activation_layers();
    let chosen = sel.select(&acts)?;
    let (outs, _) = Executor::new(g, ExecMode::Leaky).run_capture(x)?;
    let mut bits = Vec::new();
    for a in &acts[chosen] {
        let pre = if a.layer == 0 { x } else { &outs[a.layer - 1] };
        let layer = &g.layers()[a.layer];
        bits.extend(
            pre.data()
                .iter()
                .map(|&v| layer.branch_taken(v).expect("activation layer") as u8),
        );
    }
    Ok(BranchFeatureVector { bits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{coarsen, layout_assign, random_input, trace_forward};
    use crate::runtime::LayerSpec;
    use crate::tensor::Shape;
    use crate::zoo;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_relu() -> ModelGraph {
        ModelGraph::new(
            "relu1",
            Shape::new(vec![1]).unwrap(),
            vec![LayerSpec::Relu, LayerSpec::Softmax],
            vec![vec![], vec![]],
        )
        .unwrap()
    }

    #[test]
    fn single_neuron_bits() {
        let g = single_relu();
        let layout = layout_assign(&g, false);
        for (v, want) in [(-1.0, 1u8), (1.0, 0), (0.0, 1)] {
            let x = Tensor::from_dims(&[1], vec![v]).unwrap();
            let (t, _) = trace_forward(&g, &layout, &x, ExecMode::Leaky).unwrap();
            for gran in Granularity::ALL {
                let f = extract_features(&coarsen(&t, gran), &g, &layout, LayerSelector::LastLayer).unwrap();
                assert_eq!(f.bits, [want], "x={v} at {gran}");
            }
            assert_eq!(sign_oracle(&g, &x, LayerSelector::LastLayer).unwrap().bits, [want]);
        }
    }

    #[test]
    fn oracle_on_known_preactivations() {
        let w = Tensor::from_dims(&[1, 2], vec![-2.0, 3.0]).unwrap();
        let b = Tensor::from_dims(&[2], vec![0.0, 0.0]).unwrap();
        let g = ModelGraph::new(
            "lin",
            Shape::new(vec![1]).unwrap(),
            vec![
                LayerSpec::Dense {
                    in_units: 1,
                    out_units: 2,
                },
                LayerSpec::Relu,
                LayerSpec::Softmax,
            ],
            vec![vec![w, b], vec![], vec![]],
        )
        .unwrap();
        let x = Tensor::from_dims(&[1], vec![1.0]).unwrap();
        assert_eq!(sign_oracle(&g, &x, LayerSelector::LastLayer).unwrap().bits, [1, 0]);
    }

    #[test]
    fn extraction_matches_oracle_on_random_inputs() {
        let g = zoo::mixed(4).unwrap();
        let layout = layout_assign(&g, false);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for sel in [LayerSelector::LastLayer, LayerSelector::LastTwoLayers, LayerSelector::All] {
            let ex = FeatureExtractor::new(&g, &layout, Granularity::Full, sel).unwrap();
            for _ in 0..50 {
                let x = random_input(&g, &mut rng);
                let (t, _) = trace_forward(&g, &layout, &x, ExecMode::Leaky).unwrap();
                let f = ex.extract(&coarsen(&t, Granularity::Full)).unwrap();
                assert_eq!(f, sign_oracle(&g, &x, sel).unwrap());
            }
        }
    }

    #[test]
    fn oblivious_traces_give_zero_bits() {
        let g = zoo::mlp(&[10, 6, 3], 1).unwrap();
        let layout = layout_assign(&g, false);
        let x = random_input(&g, &mut ChaCha8Rng::seed_from_u64(1));
        let (t, _) = trace_forward(&g, &layout, &x, ExecMode::Oblivious).unwrap();
        let f = extract_features(&coarsen(&t, Granularity::Page), &g, &layout, LayerSelector::LastLayer).unwrap();
        assert_eq!(f.ones(), 0);
        assert_eq!(f.len(), 6);
    }

    #[test]
    fn mismatched_trace_is_an_extraction_error() {
        let g = zoo::mlp(&[10, 6, 3], 1).unwrap();
        let other = zoo::mlp(&[10, 7, 3], 1).unwrap();
        let layout = layout_assign(&g, false);
        let x = random_input(&g, &mut ChaCha8Rng::seed_from_u64(1));
        let (t, _) = trace_forward(&g, &layout, &x, ExecMode::Leaky).unwrap();
        let mut c = coarsen(&t, Granularity::Page);
        let ex = FeatureExtractor::new(&other, &layout, Granularity::Page, LayerSelector::LastLayer).unwrap();
        assert!(matches!(ex.extract_observations(&c.observations), Err(Error::Extraction(_))));
        c.observations.truncate(c.observations.len() / 2);
        assert!(matches!(
            extract_features(&c, &g, &layout, LayerSelector::LastLayer),
            Err(Error::Extraction(_))
        ));
        assert!(LayerSelector::LastTwoLayers.select(&g.activation_layers()).is_err());
    }

    #[test]
    fn compact_layout_hides_branches_from_page_observer() {
        let g = zoo::mlp(&[10, 6, 3], 1).unwrap();
        let layout = layout_assign(&g, true);
        assert!(FeatureExtractor::new(&g, &layout, Granularity::Page, LayerSelector::LastLayer).is_err());
        assert!(FeatureExtractor::new(&g, &layout, Granularity::CacheLine, LayerSelector::LastLayer).is_ok());
    }
}
