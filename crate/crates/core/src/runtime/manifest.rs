// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::graph::ModelGraph;
use super::probe::KernelId;

/// The kernels a model can reach, out of everything the runtime registers.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelManifest {
    pub model: String,
    pub required: BTreeSet<KernelId>,
    pub registered: usize,
}

impl KernelManifest {
    /// `1 - |required| / |registered|`.
    pub fn reduction(&self) -> f64 {
        1.0 - self.required.len() as f64 / self.registered as f64
    }

    /// `model,kernel_id,required` rows for every registered kernel, then a
    /// `# reduction_fraction=` summary line.
    pub fn to_csv(&self, header_comment: &str) -> String {
        let mut s = String::new();
        if !header_comment.is_empty() {
            let _ = writeln!(s, "# {header_comment}");
        }
        s.push_str("model,kernel_id,required\n");
        for k in KernelId::ALL {
            let _ = writeln!(s, "{},{},{}", self.model, k.name(), self.required.contains(&k) as u8);
        }
        let _ = writeln!(
            s,
            "# required={} registered={} reduction_fraction={:.4}",
            self.required.len(),
            self.registered,
            self.reduction()
        );
        s
    }
}

pub fn kernel_manifest(g: &ModelGraph) -> KernelManifest {
    let required = g
        .layers()
        .iter()
        .flat_map(|l| l.kernels().iter().copied())
        .collect();
    KernelManifest {
        model: g.name().to_string(),
        required,
        registered: KernelId::ALL.len(),
    }
}
