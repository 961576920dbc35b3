// SPDX-License-Identifier: Apache-2.0

//! Simulated address space, access traces and what coarser channels see of them.

mod file;
mod layout;
mod trace;
mod verify;

pub use file::{TraceFile, TraceRecord, MAGIC, REDACTED_SITE, VERSION};
pub use layout::{layout_assign, BufferRegion, MemoryLayout, CODE_BASE, DATA_BASE, LINE_SIZE, PAGE_SIZE};
pub use trace::{
    coarsen, coarsen_events, trace_diff, trace_equal, AccessEvent, AccessKind, AccessTrace, ChannelTrace,
    Granularity, Observation, SiteDiff, TraceEquality, TraceRecorder,
};
pub use verify::{
    branch_sites, leaky_kernels, random_input, site_name, trace_forward, trace_with, verify, ObliviousDivergence,
    VerifyConfig, VerifyReport,
};
