// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use super::layout::{MemoryLayout, LINE_SIZE, PAGE_SIZE};
use crate::error::{arg_err, Result};
use crate::runtime::{Block, BufferId, ExecMode, KernelId, Probe, Site};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
#[repr(u8)]
pub enum AccessKind {
    Exec = 0,
    Read = 1,
    Write = 2,
}

impl AccessKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(AccessKind::Exec),
            1 => Some(AccessKind::Read),
            2 => Some(AccessKind::Write),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AccessKind::Exec => "exec",
            AccessKind::Read => "read",
            AccessKind::Write => "write",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct AccessEvent {
    pub seq: u64,
    pub site: u32,
    pub kind: AccessKind,
    pub addr: u64,
    /// Bytes; 0 for exec events.
    pub size: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessTrace {
    pub model: String,
    pub mode: ExecMode,
    pub fingerprint: [u8; 32],
    pub events: Vec<AccessEvent>,
}

/// Probe that turns kernel events into addressed [`AccessEvent`]s.
pub struct TraceRecorder<'l> {
    layout: &'l MemoryLayout,
    events: Vec<AccessEvent>,
    touched: BTreeSet<KernelId>,
}

impl<'l> TraceRecorder<'l> {
    pub fn new(layout: &'l MemoryLayout) -> Self {
        Self {
            layout,
            events: Vec::new(),
            touched: BTreeSet::new(),
        }
    }

    #[inline]
    pub fn record(&mut self, site: u32, kind: AccessKind, addr: u64, size: u32) {
        let seq = self.events.len() as u64;
        self.events.push(AccessEvent {
            seq,
            site,
            kind,
            addr,
            size,
        });
    }

    pub fn events(&self) -> &[AccessEvent] {
        &self.events
    }

    pub fn touched(&self) -> &BTreeSet<KernelId> {
        &self.touched
    }

    pub fn finish(self, model: &str, mode: ExecMode) -> AccessTrace {
        AccessTrace {
            model: model.to_string(),
            mode,
            fingerprint: self.layout.fingerprint(),
            events: self.events,
        }
    }

    fn data(&mut self, site: Site, kind: AccessKind, buf: BufferId, offset: usize, len: usize) {
        let addr = self.layout.data_addr(buf, offset);
        self.record(site.id(), kind, addr, (len * 4) as u32);
    }
}

impl Probe for TraceRecorder<'_> {
    fn enter(&mut self, kernel: KernelId) {
        self.touched.insert(kernel);
    }

    fn exec(&mut self, site: Site) {
        let addr = self
            .layout
            .code_addr(site)
            .unwrap_or_else(|| panic!("{site} is not in the layout"));
        self.record(site.id(), AccessKind::Exec, addr, 0);
    }

    fn read(&mut self, site: Site, buf: BufferId, offset: usize, len: usize) {
        self.data(site, AccessKind::Read, buf, offset, len);
    }

    fn write(&mut self, site: Site, buf: BufferId, offset: usize, len: usize) {
        self.data(site, AccessKind::Write, buf, offset, len);
    }
}

/// What a channel lets the observer see of each event.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
#[repr(u8)]
pub enum Granularity {
    /// Code site and full address.
    Full = 0,
    /// 64-byte line number.
    CacheLine = 1,
    /// 4 KiB page number.
    Page = 2,
    /// Page numbers with consecutive repeats collapsed.
    PageFault = 3,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [
        Granularity::Full,
        Granularity::CacheLine,
        Granularity::Page,
        Granularity::PageFault,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Granularity::Full => "full",
            Granularity::CacheLine => "line",
            Granularity::Page => "page",
            Granularity::PageFault => "fault",
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    /// Observation for an event at this granularity (before fault dedup).
    #[inline]
    pub fn observe(self, site: u32, addr: u64) -> Observation {
        match self {
            Granularity::Full => Observation {
                site: Some(site),
                value: addr,
            },
            Granularity::CacheLine => Observation {
                site: None,
                value: addr / LINE_SIZE,
            },
            Granularity::Page | Granularity::PageFault => Observation {
                site: None,
                value: addr / PAGE_SIZE,
            },
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Granularity {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .map_or_else(|| arg_err(format!("unknown granularity {s:?} (full, line, page, fault)")), Ok)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct Observation {
    /// Present only at full granularity.
    pub site: Option<u32>,
    pub value: u64,
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.site {
            Some(s) => write!(f, "({s:#x}, {:#x})", self.value),
            None => write!(f, "{:#x}", self.value),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelTrace {
    pub granularity: Granularity,
    pub fingerprint: [u8; 32],
    pub observations: Vec<Observation>,
}

/// Applies the pointwise rule of `granularity`, collapsing consecutive
/// repeats for [`Granularity::PageFault`].
pub fn coarsen_events<'a>(
    events: impl IntoIterator<Item = &'a AccessEvent>,
    granularity: Granularity,
) -> Vec<Observation> {
    let mut out: Vec<Observation> = Vec::new();
    for e in events {
        let o = granularity.observe(e.site, e.addr);
        if granularity == Granularity::PageFault && out.last() == Some(&o) {
            continue;
        }
        out.push(o);
    }
    out
}

pub fn coarsen(t: &AccessTrace, granularity: Granularity) -> ChannelTrace {
    ChannelTrace {
        granularity,
        fingerprint: t.fingerprint,
        observations: coarsen_events(&t.events, granularity),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceEquality {
    Equal,
    /// First differing position; `None` where one trace already ended.
    Diverged {
        index: usize,
        left: Option<Observation>,
        right: Option<Observation>,
    },
}

impl TraceEquality {
    pub fn is_equal(&self) -> bool {
        *self == TraceEquality::Equal
    }
}

pub fn trace_equal(a: &ChannelTrace, b: &ChannelTrace) -> Result<TraceEquality> {
    if a.granularity != b.granularity {
        return arg_err(format!(
            "cannot compare {} and {} traces",
            a.granularity, b.granularity
        ));
    }
    let (x, y) = (&a.observations, &b.observations);
    if x == y {
        return Ok(TraceEquality::Equal);
    }
    let index = x.iter().zip(y).position(|(p, q)| p != q).unwrap_or(x.len().min(y.len()));
    Ok(TraceEquality::Diverged {
        index,
        left: x.get(index).copied(),
        right: y.get(index).copied(),
    })
}

type SiteEvents = BTreeMap<u32, Vec<(AccessKind, u64, u32, u64)>>;

/// Groups events by site, tagging each with the number of loop-head
/// executions before it. Loop structure is public, so the tag pins where
/// in the iteration space a block ran without depending on other branches.
fn per_site(t: &AccessTrace) -> SiteEvents {
    let mut m: SiteEvents = BTreeMap::new();
    let mut iter = 0u64;
    for e in &t.events {
        if e.kind == AccessKind::Exec && Site::from_id(e.site).is_some_and(|s| s.block == Block::LoopHead) {
            iter += 1;
        }
        m.entry(e.site).or_default().push((e.kind, e.addr, e.size, iter));
    }
    m
}

/// Incremental form of [`trace_diff`] that holds only the reference trace.
pub struct SiteDiff {
    fingerprint: [u8; 32],
    reference: SiteEvents,
    diverging: BTreeSet<u32>,
    count: usize,
}

impl SiteDiff {
    pub fn new(reference: &AccessTrace) -> Self {
        Self {
            fingerprint: reference.fingerprint,
            reference: per_site(reference),
            diverging: BTreeSet::new(),
            count: 1,
        }
    }

    pub fn add(&mut self, t: &AccessTrace) -> Result<()> {
        if t.fingerprint != self.fingerprint {
            return arg_err("traces come from different layouts");
        }
        let other = per_site(t);
        for site in self.reference.keys().chain(other.keys()) {
            if self.reference.get(site) != other.get(site) {
                self.diverging.insert(*site);
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<Vec<u32>> {
        if self.count < 2 {
            return arg_err("trace_diff needs at least two traces");
        }
        Ok(self.diverging.into_iter().collect())
    }
}

/// Code sites whose event subsequence is not the same in every trace.
pub fn trace_diff(ts: &[AccessTrace]) -> Result<Vec<u32>> {
    let Some((first, rest)) = ts.split_first() else {
        return arg_err("trace_diff needs at least two traces");
    };
    let mut d = SiteDiff::new(first);
    for t in rest {
        d.add(t)?;
    }
    d.finish()
}
