// SPDX-License-Identifier: Apache-2.0

//! Model files: a JSON manifest plus a raw little-endian `f32` blob.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::ModelGraph;
use super::layer::{LayerSpec, ParamRole};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub layer: usize,
    pub role: ParamRole,
    pub shape: Shape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub name: String,
    pub input_shape: Shape,
    pub layers: Vec<LayerSpec>,
    pub param_order: Vec<ParamEntry>,
    /// Lowercase hex digest of the blob.
    pub weights_sha256: String,
}

fn blob_of(g: &ModelGraph) -> Vec<u8> {
    let mut out = Vec::with_capacity(g.param_count() * 4);
    for t in g.all_params().iter().flatten() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn manifest_of(g: &ModelGraph) -> (ModelManifest, Vec<u8>) {
    let blob = blob_of(g);
    let param_order = g
        .layers()
        .iter()
        .enumerate()
        .flat_map(|(i, l)| {
            l.param_shapes()
                .into_iter()
                .map(move |(role, shape)| ParamEntry { layer: i, role, shape })
        })
        .collect();
    let m = ModelManifest {
        name: g.name().to_string(),
        input_shape: g.input_shape().clone(),
        layers: g.layers().to_vec(),
        param_order,
        weights_sha256: hex::encode(Sha256::digest(&blob)),
    };
    (m, blob)
}

fn write_new(path: &Path, bytes: &[u8], overwrite: bool) -> Result<()> {
    let mut f = OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .create_new(!overwrite)
        .open(path)
        .map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::Argument(format!("{} exists (pass the force flag to overwrite)", path.display()))
            } else {
                Error::Io(e)
            }
        })?;
    f.write_all(bytes)?;
    Ok(())
}

/// Writes the manifest and blob. Existing files are replaced only when `overwrite` is set.
pub fn save_model(g: &ModelGraph, manifest_path: &Path, blob_path: &Path, overwrite: bool) -> Result<()> {
    if !overwrite {
        for p in [manifest_path, blob_path] {
            if p.exists() {
                return Err(Error::Argument(format!(
                    "{} exists (pass the force flag to overwrite)",
                    p.display()
                )));
            }
        }
    }
    let (m, blob) = manifest_of(g);
    let json = serde_json::to_string_pretty(&m).map_err(|e| Error::Format(e.to_string()))?;
    write_new(blob_path, &blob, overwrite)?;
    write_new(manifest_path, json.as_bytes(), overwrite)
}

/// Binds a manifest to blob bytes. Checks run in order: blob length,
/// checksum, parameter order, shape chain.
pub fn model_from_parts(m: &ModelManifest, blob: &[u8]) -> Result<ModelGraph> {
    let expected: usize = m.param_order.iter().map(|p| p.shape.numel() * 4).sum();
    if blob.len() != expected {
        return Err(Error::BlobLength {
            expected,
            actual: blob.len(),
        });
    }
    let actual = hex::encode(Sha256::digest(blob));
    if !actual.eq_ignore_ascii_case(&m.weights_sha256) {
        return Err(Error::Checksum {
            expected: m.weights_sha256.clone(),
            actual,
        });
    }
    let mut params: Vec<Vec<Tensor>> = vec![Vec::new(); m.layers.len()];
    let mut off = 0;
    for (k, e) in m.param_order.iter().enumerate() {
        let Some(layer) = m.layers.get(e.layer) else {
            return Err(Error::Format(format!("param_order[{k}] names missing layer {}", e.layer)));
        };
        let want = layer.param_shapes();
        let slot = params[e.layer].len();
        match want.get(slot) {
            Some((role, _)) if *role == e.role => {}
            _ => {
                return Err(Error::Format(format!(
                    "param_order[{k}]: unexpected {} for layer {} ({})",
                    e.role.name(),
                    e.layer,
                    layer.kind_name()
                )))
            }
        }
        let n = e.shape.numel();
        let data: Vec<f32> = blob[off..off + n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        off += n * 4;
        params[e.layer].push(Tensor::new(e.shape.clone(), data)?);
    }
    ModelGraph::new(m.name.clone(), m.input_shape.clone(), m.layers.clone(), params)
}

pub fn load_model(manifest_path: &Path, blob_path: &Path) -> Result<ModelGraph> {
    let text = fs::read_to_string(manifest_path)?;
    let m: ModelManifest =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", manifest_path.display())))?;
    let blob = fs::read(blob_path)?;
    model_from_parts(&m, &blob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo;

    #[test]
    fn round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        for g in [zoo::mlp(&[6, 4, 3], 9).unwrap(), zoo::mixed(3).unwrap()] {
            let mp = dir.path().join(format!("{}.json", g.name()));
            let bp = dir.path().join(format!("{}.bin", g.name()));
            save_model(&g, &mp, &bp, false).unwrap();
            let back = load_model(&mp, &bp).unwrap();
            assert_eq!(back.layers(), g.layers());
            assert_eq!(back.all_params(), g.all_params());
            assert_eq!(back.structure_json(), g.structure_json());
            assert!(matches!(save_model(&g, &mp, &bp, false), Err(Error::Argument(_))));
            save_model(&g, &mp, &bp, true).unwrap();
        }
    }

    #[test]
    fn two_dense_layers() {
        let g = zoo::mlp(&[5, 4, 2], 1).unwrap();
        let (m, blob) = manifest_of(&g);
        let back = model_from_parts(&m, &blob).unwrap();
        let dense = back
            .layers()
            .iter()
            .filter(|l| matches!(l, LayerSpec::Dense { .. }))
            .count();
        assert_eq!(dense, 2);
    }

    #[test]
    fn detects_short_blob_and_bad_checksum() {
        let g = zoo::mlp(&[5, 4, 2], 1).unwrap();
        let (m, mut blob) = manifest_of(&g);
        assert!(matches!(
            model_from_parts(&m, &blob[..blob.len() - 4]),
            Err(Error::BlobLength { .. })
        ));
        blob[0] ^= 1;
        assert!(matches!(model_from_parts(&m, &blob), Err(Error::Checksum { .. })));
    }

    #[test]
    fn malformed_manifest_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let mp = dir.path().join("m.json");
        let bp = dir.path().join("m.bin");
        fs::write(&mp, "{ not json").unwrap();
        fs::write(&bp, []).unwrap();
        assert!(matches!(load_model(&mp, &bp), Err(Error::Parse(_))));
    }
}
