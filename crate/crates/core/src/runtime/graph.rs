// SPDX-License-Identifier: Apache-2.0

use super::layer::{LayerSpec, ParamRole};
use super::probe::{BufferId, KernelId};
use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BufferInfo {
    pub id: BufferId,
    pub name: String,
    /// Length in `f32` elements.
    pub elems: usize,
}

/// Buffers a layer touches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerBuffers {
    pub input: BufferId,
    pub output: BufferId,
    /// Parameter buffers in [`LayerSpec::param_shapes`] order.
    pub params: Vec<BufferId>,
}

/// An activation layer whose reference kernel has an assign-or-nothing branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActivationLayer {
    pub layer: usize,
    pub kernel: KernelId,
    pub width: usize,
}

/// A validated, immutable classifier: layer specs with bound parameters
/// and a deterministic buffer registry.
///
/// The registry holds, in order: the input, then for each layer its
/// parameters followed by its output, then the predicted-label cell.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    name: String,
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    params: Vec<Vec<Tensor>>,
    shapes: Vec<Shape>,
    buffers: Vec<BufferInfo>,
    layer_buffers: Vec<LayerBuffers>,
    label_buffer: BufferId,
}

impl ModelGraph {
    pub fn new(
        name: impl Into<String>,
        input_shape: Shape,
        layers: Vec<LayerSpec>,
        params: Vec<Vec<Tensor>>,
    ) -> Result<Self> {
        let name = name.into();
        if layers.is_empty() {
            return shape_err("model has no layers");
        }
        if layers.last() != Some(&LayerSpec::Softmax) {
            return shape_err("the final layer must be softmax");
        }
        if params.len() != layers.len() {
            return shape_err(format!(
                "{} layers but {} parameter groups",
                layers.len(),
                params.len()
            ));
        }

        let mut shapes = Vec::with_capacity(layers.len());
        let mut cur = input_shape.clone();
        for (i, (layer, ps)) in layers.iter().zip(&params).enumerate() {
            cur = layer
                .output_shape(&cur)
                .map_err(|e| crate::Error::Shape(format!("layer {i} ({}): {e}", layer.kind_name())))?;
            let want = layer.param_shapes();
            if want.len() != ps.len() {
                return shape_err(format!(
                    "layer {i} ({}) needs {} parameter tensors, got {}",
                    layer.kind_name(),
                    want.len(),
                    ps.len()
                ));
            }
            for ((role, shape), t) in want.iter().zip(ps) {
                if t.shape() != shape {
                    return shape_err(format!(
                        "layer {i} {}: expected {shape:?}, got {:?}",
                        role.name(),
                        t.shape()
                    ));
                }
                if t.data().iter().any(|v| !v.is_finite()) {
                    return shape_err(format!("layer {i} {} has non-finite values", role.name()));
                }
            }
            shapes.push(cur.clone());
        }

        let mut buffers = Vec::new();
        let mut push = |name: String, elems: usize| {
            let id = BufferId(buffers.len() as u32);
            buffers.push(BufferInfo { id, name, elems });
            id
        };
        let mut prev = push("input".to_string(), input_shape.numel());
        let mut layer_buffers = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            let kind = layer.kind_name();
            let pbufs = layer
                .param_shapes()
                .into_iter()
                .map(|(role, s)| push(format!("l{i}.{kind}.{}", role.name()), s.numel()))
                .collect();
            let out = push(format!("l{i}.{kind}.out"), shapes[i].numel());
            layer_buffers.push(LayerBuffers {
                input: prev,
                output: out,
                params: pbufs,
            });
            prev = out;
        }
        let label_buffer = push("label".to_string(), 1);

        Ok(Self {
            name,
            input_shape,
            layers,
            params,
            shapes,
            buffers,
            layer_buffers,
            label_buffer,
        })
    }

    /// Same architecture with different parameter values.
    pub fn with_params(&self, params: Vec<Vec<Tensor>>) -> Result<Self> {
        Self::new(
            self.name.clone(),
            self.input_shape.clone(),
            self.layers.clone(),
            params,
        )
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &Shape {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self, layer: usize) -> &[Tensor] {
        &self.params[layer]
    }

    pub fn all_params(&self) -> &[Vec<Tensor>] {
        &self.params
    }

    pub fn param(&self, layer: usize, role: ParamRole) -> Option<&Tensor> {
        self.layers[layer]
            .param_shapes()
            .iter()
            .position(|(r, _)| *r == role)
            .map(|i| &self.params[layer][i])
    }

    pub fn output_shape(&self, layer: usize) -> &Shape {
        &self.shapes[layer]
    }

    /// Shape of the tensor entering `layer`.
    pub fn input_shape_of(&self, layer: usize) -> &Shape {
        if layer == 0 {
            &self.input_shape
        } else {
            &self.shapes[layer - 1]
        }
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().expect("non-empty").numel()
    }

    pub fn buffers(&self) -> &[BufferInfo] {
        &self.buffers
    }

    pub fn layer_buffers(&self, layer: usize) -> &LayerBuffers {
        &self.layer_buffers[layer]
    }

    pub fn label_buffer(&self) -> BufferId {
        self.label_buffer
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().flatten().map(Tensor::len).sum()
    }

    /// Activation layers with assign-or-nothing branches, in execution order.
    pub fn activation_layers(&self) -> Vec<ActivationLayer> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                l.activation_kernel().map(|kernel| ActivationLayer {
                    layer: i,
                    kernel,
                    width: self.shapes[i].numel(),
                })
            })
            .collect()
    }

    /// JSON description of everything except parameter values.
    pub fn structure_json(&self) -> String {
        serde_json::json!({
            "name": self.name,
            "input_shape": self.input_shape,
            "layers": self.layers,
        })
        .to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelGraph {
        let w = Tensor::from_dims(&[2, 3], vec![0.0; 6]).unwrap();
        let b = Tensor::from_dims(&[3], vec![0.0; 3]).unwrap();
        ModelGraph::new(
            "tiny",
            Shape::new(vec![2]).unwrap(),
            vec![
                LayerSpec::Dense {
                    in_units: 2,
                    out_units: 3,
                },
                LayerSpec::Relu,
                LayerSpec::Softmax,
            ],
            vec![vec![w, b], vec![], vec![]],
        )
        .unwrap()
    }

    #[test]
    fn buffer_registry_is_deterministic() {
        let g = tiny();
        let names: Vec<_> = g.buffers().iter().map(|b| b.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "input",
                "l0.dense.weight",
                "l0.dense.bias",
                "l0.dense.out",
                "l1.relu.out",
                "l2.softmax.out",
                "label"
            ]
        );
        assert_eq!(g.layer_buffers(1).input, g.layer_buffers(0).output);
        assert_eq!(g.num_classes(), 3);
        assert_eq!(
            g.activation_layers(),
            vec![ActivationLayer {
                layer: 1,
                kernel: KernelId::Relu,
                width: 3
            }]
        );
    }

    #[test]
    fn rejects_bad_graphs() {
        let s = Shape::new(vec![2]).unwrap();
        assert!(ModelGraph::new("e", s.clone(), vec![], vec![]).is_err());
        assert!(ModelGraph::new("n", s.clone(), vec![LayerSpec::Relu], vec![vec![]]).is_err());
        let w = Tensor::from_dims(&[3, 3], vec![0.0; 9]).unwrap();
        let b = Tensor::from_dims(&[3], vec![0.0; 3]).unwrap();
        let bad = ModelGraph::new(
            "w",
            s,
            vec![
                LayerSpec::Dense {
                    in_units: 2,
                    out_units: 3,
                },
                LayerSpec::Softmax,
            ],
            vec![vec![w, b], vec![]],
        );
        assert!(matches!(bad, Err(crate::Error::Shape(_))));
    }
}
