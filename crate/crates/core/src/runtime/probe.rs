// SPDX-License-Identifier: Apache-2.0

//! Kernel identities, code sites and the event sink kernels report to.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum KernelId {
    Dense = 0,
    Conv2d = 1,
    BatchNorm = 2,
    Relu = 3,
    Threshold = 4,
    HardTanh = 5,
    LeakyRelu = 6,
    MaxPool2d = 7,
    MeanPool2d = 8,
    Flatten = 9,
    Softmax = 10,
    Argmax = 11,
}

impl KernelId {
    /// Every kernel the runtime ships, in registry order.
    pub const ALL: [KernelId; 12] = [
        KernelId::Dense,
        KernelId::Conv2d,
        KernelId::BatchNorm,
        KernelId::Relu,
        KernelId::Threshold,
        KernelId::HardTanh,
        KernelId::LeakyRelu,
        KernelId::MaxPool2d,
        KernelId::MeanPool2d,
        KernelId::Flatten,
        KernelId::Softmax,
        KernelId::Argmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelId::Dense => "dense",
            KernelId::Conv2d => "conv2d",
            KernelId::BatchNorm => "batchnorm",
            KernelId::Relu => "relu",
            KernelId::Threshold => "threshold",
            KernelId::HardTanh => "hardtanh",
            KernelId::LeakyRelu => "leaky_relu",
            KernelId::MaxPool2d => "maxpool2d",
            KernelId::MeanPool2d => "meanpool2d",
            KernelId::Flatten => "flatten",
            KernelId::Softmax => "softmax",
            KernelId::Argmax => "argmax",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    fn from_index(i: u32) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    /// Kernels whose reference implementation branches on tensor values.
    pub fn is_data_dependent(self) -> bool {
        matches!(
            self,
            KernelId::Relu
                | KernelId::Threshold
                | KernelId::HardTanh
                | KernelId::LeakyRelu
                | KernelId::MaxPool2d
                | KernelId::Softmax
                | KernelId::Argmax
        )
    }

    pub fn variants(self) -> &'static [Variant] {
        if self.is_data_dependent() {
            &[Variant::Leaky, Variant::Oblivious]
        } else {
            &[Variant::Shared]
        }
    }

    /// Basic blocks making up one variant of this kernel.
    pub fn blocks(self, variant: Variant) -> &'static [Block] {
        use Block::*;
        match (variant, self) {
            (Variant::Shared, _) => &[Entry, LoopHead, Body, Exit],
            (Variant::Leaky, KernelId::HardTanh) => {
                &[Entry, LoopHead, Then, ElseIf, Then2, Else, Continue, Exit]
            }
            (Variant::Leaky, _) => &[Entry, LoopHead, Then, Continue, Body, Exit],
            (Variant::Oblivious, _) => &[Entry, LoopHead, Continue, Body, Exit],
        }
    }
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which implementation of a kernel runs.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
#[repr(u8)]
pub enum Variant {
    /// Kernels without secret-dependent control flow have a single body.
    Shared = 0,
    Leaky = 1,
    Oblivious = 2,
}

impl Variant {
    fn from_index(i: u32) -> Option<Self> {
        match i {
            0 => Some(Variant::Shared),
            1 => Some(Variant::Leaky),
            2 => Some(Variant::Oblivious),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Shared => "shared",
            Variant::Leaky => "leaky",
            Variant::Oblivious => "oblivious",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
#[repr(u8)]
pub enum Block {
    Entry = 0,
    /// Top of the per-element loop; holds the branch condition when there is one.
    LoopHead = 1,
    /// Assignment executed only when the condition holds.
    Then = 2,
    ElseIf = 3,
    Then2 = 4,
    Else = 5,
    /// Join point after the conditional.
    Continue = 6,
    Body = 7,
    Exit = 8,
}

impl Block {
    const ALL: [Block; 9] = [
        Block::Entry,
        Block::LoopHead,
        Block::Then,
        Block::ElseIf,
        Block::Then2,
        Block::Else,
        Block::Continue,
        Block::Body,
        Block::Exit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Entry => "entry",
            Block::LoopHead => "loop_head",
            Block::Then => "then",
            Block::ElseIf => "else_if",
            Block::Then2 => "then2",
            Block::Else => "else",
            Block::Continue => "continue",
            Block::Body => "body",
            Block::Exit => "exit",
        }
    }
}

/// A static code location: one basic block of one kernel variant.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Site {
    pub kernel: KernelId,
    pub variant: Variant,
    pub block: Block,
}

impl Site {
    pub const fn new(kernel: KernelId, variant: Variant, block: Block) -> Self {
        Self {
            kernel,
            variant,
            block,
        }
    }

    /// Packed id: kernel in bits 8.., variant in 4..8, block in 0..4.
    pub fn id(self) -> u32 {
        ((self.kernel as u32) << 8) | ((self.variant as u32) << 4) | self.block as u32
    }

    pub fn from_id(id: u32) -> Option<Self> {
        let kernel = KernelId::from_index(id >> 8)?;
        let variant = Variant::from_index((id >> 4) & 0xf)?;
        let block = *Block::ALL.get((id & 0xf) as usize)?;
        let site = Site::new(kernel, variant, block);
        (kernel.variants().contains(&variant) && kernel.blocks(variant).contains(&block))
            .then_some(site)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{}.{}",
            self.kernel.name(),
            self.variant.name(),
            self.block.name()
        )
    }
}

/// Index into a model's buffer registry.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct BufferId(pub u32);

/// Sink for the events a kernel would expose to a memory observer.
///
/// Offsets and lengths are in `f32` elements of the named buffer. All
/// methods default to no-ops so an untraced run compiles down to the bare
/// arithmetic.
pub trait Probe {
    #[inline(always)]
    fn enter(&mut self, _kernel: KernelId) {}

    #[inline(always)]
    fn exec(&mut self, _site: Site) {}

    #[inline(always)]
    fn read(&mut self, _site: Site, _buf: BufferId, _offset: usize, _len: usize) {}

    #[inline(always)]
    fn write(&mut self, _site: Site, _buf: BufferId, _offset: usize, _len: usize) {}
}

/// Discards everything.
#[derive(Default, Debug, Clone, Copy)]
pub struct NoProbe;

impl Probe for NoProbe {}

/// Records which kernels an execution entered.
#[derive(Default, Debug, Clone)]
pub struct KernelTouchLog {
    pub touched: BTreeSet<KernelId>,
}

impl Probe for KernelTouchLog {
    fn enter(&mut self, kernel: KernelId) {
        self.touched.insert(kernel);
    }
}
