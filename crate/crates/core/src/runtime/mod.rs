// SPDX-License-Identifier: Apache-2.0

//! Kernels, the graph executor, model files and the kernel manifest.

mod exec;
mod graph;
mod io;
pub(crate) mod kernels;
mod layer;
mod manifest;
mod probe;

pub use exec::{forward, forward_batch, forward_probed, ExecMode, Executor, Prediction};
pub use graph::{ActivationLayer, BufferInfo, LayerBuffers, ModelGraph};
pub use io::{load_model, manifest_of, model_from_parts, save_model, ModelManifest, ParamEntry};
pub use kernels::{
    batchnorm_forward, conv2d_forward, hardtanh_forward, leaky_relu_forward, maxpool2d_forward,
    meanpool2d_forward, relu_forward, softmax_forward,
};
pub use layer::{LayerSpec, ParamRole};
pub use manifest::{kernel_manifest, KernelManifest};
pub use probe::{Block, BufferId, KernelId, KernelTouchLog, NoProbe, Probe, Site, Variant};
