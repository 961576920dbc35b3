// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::runtime::{kernel_manifest, BufferId, KernelId, ModelGraph, Site, Variant};

pub const PAGE_SIZE: u64 = 4096;
pub const LINE_SIZE: u64 = 64;
pub const CODE_BASE: u64 = 0x0040_0000;
pub const DATA_BASE: u64 = 0x1000_0000;
/// Spacing of basic blocks inside a code page.
const BLOCK_STRIDE: u64 = 0x40;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BufferRegion {
    pub id: BufferId,
    pub name: String,
    pub base: u64,
    pub bytes: u64,
}

/// Simulated addresses for every buffer and basic block of one model.
///
/// Buffers are page aligned and laid out back to back in registry order
/// from [`DATA_BASE`]. Code covers the model's kernel manifest; both
/// variants of every data-dependent kernel are present so either mode can
/// run under the same layout. By default every basic block sits on its own
/// page; the compact layout packs each kernel variant into one page.
#[derive(Clone, PartialEq, Eq)]
pub struct MemoryLayout {
    buffers: Vec<BufferRegion>,
    code: BTreeMap<Site, u64>,
    /// Site id → address, 0 where absent.
    code_index: Vec<u64>,
    compact: bool,
    fingerprint: [u8; 32],
}

impl fmt::Debug for MemoryLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemoryLayout")
            .field("buffers", &self.buffers.len())
            .field("code_blocks", &self.code.len())
            .field("compact", &self.compact)
            .field("fingerprint", &self.fingerprint_hex())
            .finish()
    }
}

fn align_up(v: u64, to: u64) -> u64 {
    v.div_ceil(to) * to
}

pub fn layout_assign(g: &ModelGraph, compact: bool) -> MemoryLayout {
    let mut buffers = Vec::with_capacity(g.buffers().len());
    let mut next = DATA_BASE;
    for b in g.buffers() {
        let bytes = b.elems as u64 * 4;
        buffers.push(BufferRegion {
            id: b.id,
            name: b.name.clone(),
            base: next,
            bytes,
        });
        next = align_up(next + bytes, PAGE_SIZE);
    }

    let mut code = BTreeMap::new();
    let mut page = CODE_BASE;
    for k in kernel_manifest(g).required {
        for &v in k.variants() {
            for (ord, &b) in k.blocks(v).iter().enumerate() {
                code.insert(Site::new(k, v, b), page + BLOCK_STRIDE * ord as u64);
                if !compact {
                    page += PAGE_SIZE;
                }
            }
            if compact {
                page += PAGE_SIZE;
            }
        }
    }
    let max_id = code.keys().map(|s| s.id()).max().unwrap_or(0) as usize;
    let mut code_index = vec![0u64; max_id + 1];
    for (s, &a) in &code {
        code_index[s.id() as usize] = a;
    }

    let mut h = Sha256::new();
    h.update(g.structure_json().as_bytes());
    for b in &buffers {
        h.update(b.name.as_bytes());
        h.update(b.base.to_le_bytes());
        h.update(b.bytes.to_le_bytes());
    }
    for (s, a) in &code {
        h.update(s.id().to_le_bytes());
        h.update(a.to_le_bytes());
    }
    h.update([compact as u8]);

    MemoryLayout {
        buffers,
        code,
        code_index,
        compact,
        fingerprint: h.finalize().into(),
    }
}

impl MemoryLayout {
    pub fn fingerprint(&self) -> [u8; 32] {
        self.fingerprint
    }

    pub fn fingerprint_hex(&self) -> String {
        hex::encode(self.fingerprint)
    }

    pub fn is_compact(&self) -> bool {
        self.compact
    }

    pub fn buffers(&self) -> &[BufferRegion] {
        &self.buffers
    }

    pub fn code_blocks(&self) -> &BTreeMap<Site, u64> {
        &self.code
    }

    #[inline]
    pub fn code_addr(&self, site: Site) -> Option<u64> {
        match self.code_index.get(site.id() as usize) {
            Some(&a) if a != 0 => Some(a),
            _ => None,
        }
    }

    /// Address of element `offset` of a buffer.
    #[inline]
    pub fn data_addr(&self, buf: BufferId, offset: usize) -> u64 {
        self.buffers[buf.0 as usize].base + offset as u64 * 4
    }

    /// Checks the layout invariants: disjoint buffers, distinct block
    /// addresses, and (for the default layout) condition, then and join
    /// blocks of every data-dependent kernel on pairwise distinct pages.
    pub fn check_separation(&self) -> Result<()> {
        for w in self.buffers.windows(2) {
            if w[0].base + w[0].bytes > w[1].base {
                return Err(Error::Argument(format!("buffers {} and {} overlap", w[0].name, w[1].name)));
            }
        }
        let mut seen = BTreeMap::new();
        for (s, &a) in &self.code {
            if a < CODE_BASE || a >= DATA_BASE {
                return Err(Error::Argument(format!("{s} outside the code segment")));
            }
            if let Some(prev) = seen.insert(a, *s) {
                return Err(Error::Argument(format!("{prev} and {s} share address {a:#x}")));
            }
        }
        if self.compact {
            return Ok(());
        }
        use crate::runtime::Block;
        for k in KernelId::ALL.into_iter().filter(|k| k.is_data_dependent()) {
            let page = |b| self.code_addr(Site::new(k, Variant::Leaky, b)).map(|a| a / PAGE_SIZE);
            let (Some(head), Some(then), Some(cont)) = (page(Block::LoopHead), page(Block::Then), page(Block::Continue))
            else {
                continue;
            };
            if head == then || then == cont || head == cont {
                return Err(Error::Argument(format!("{k}: branch blocks share a page")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::Block;
    use crate::zoo;

    #[test]
    fn deterministic_and_model_specific() {
        let a = layout_assign(&zoo::mlp(&[8, 4, 2], 0).unwrap(), false);
        let b = layout_assign(&zoo::mlp(&[8, 4, 2], 0).unwrap(), false);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a, b);
        let c = layout_assign(&zoo::mlp(&[8, 5, 2], 0).unwrap(), false);
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_ne!(a.fingerprint(), layout_assign(&zoo::mlp(&[8, 4, 2], 0).unwrap(), true).fingerprint());
    }

    #[test]
    fn separation_holds_for_stock_models() {
        for name in zoo::NAMES {
            let g = zoo::by_name(name, 0).unwrap();
            for compact in [false, true] {
                let l = layout_assign(&g, compact);
                l.check_separation().unwrap();
                for b in l.buffers() {
                    assert_eq!(b.base % PAGE_SIZE, 0);
                }
            }
        }
        let l = layout_assign(&zoo::mlp(&[8, 4, 2], 0).unwrap(), false);
        let page = |b| l.code_addr(Site::new(KernelId::Relu, Variant::Leaky, b)).unwrap() / PAGE_SIZE;
        assert_ne!(page(Block::Then), page(Block::LoopHead));
        assert!(l.code_addr(Site::new(KernelId::Conv2d, Variant::Shared, Block::Entry)).is_none());
    }
}
