// SPDX-License-Identifier: Apache-2.0

//! Binary trace files and their CSV rendering.
//!
//! Layout (little-endian): `"OTRC"`, version `u32`, granularity `u8`,
//! layout fingerprint `[u8; 32]`, record count `u64`, then records of
//! `site u32, kind u8, addr u64, size u32`.
//!
//! Below full granularity a record keeps only what the channel reveals:
//! the site is `u32::MAX`, the address is truncated to its line or page and
//! the size is 0. Fault-granularity files hold one record per fault.

use std::io::{Read, Write};

use super::layout::{LINE_SIZE, PAGE_SIZE};
use super::trace::{AccessKind, AccessTrace, ChannelTrace, Granularity, Observation};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OTRC";
pub const VERSION: u32 = 1;
pub const REDACTED_SITE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub site: u32,
    pub kind: AccessKind,
    pub addr: u64,
    pub size: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceFile {
    pub granularity: Granularity,
    pub fingerprint: [u8; 32],
    pub records: Vec<TraceRecord>,
}

impl TraceFile {
    pub fn from_trace(t: &AccessTrace, granularity: Granularity) -> Self {
        let mask = match granularity {
            Granularity::Full => u64::MAX,
            Granularity::CacheLine => !(LINE_SIZE - 1),
            Granularity::Page | Granularity::PageFault => !(PAGE_SIZE - 1),
        };
        let mut records: Vec<TraceRecord> = Vec::with_capacity(t.events.len());
        for e in &t.events {
            let r = if granularity == Granularity::Full {
                TraceRecord {
                    site: e.site,
                    kind: e.kind,
                    addr: e.addr,
                    size: e.size,
                }
            } else {
                TraceRecord {
                    site: REDACTED_SITE,
                    kind: e.kind,
                    addr: e.addr & mask,
                    size: 0,
                }
            };
            if granularity == Granularity::PageFault && records.last().is_some_and(|p| p.addr == r.addr) {
                continue;
            }
            records.push(r);
        }
        Self {
            granularity,
            fingerprint: t.fingerprint,
            records,
        }
    }

    pub fn to_channel(&self) -> ChannelTrace {
        let observations = self
            .records
            .iter()
            .map(|r| match self.granularity {
                Granularity::Full => Observation {
                    site: Some(r.site),
                    value: r.addr,
                },
                g => g.observe(r.site, r.addr),
            })
            .collect();
        ChannelTrace {
            granularity: self.granularity,
            fingerprint: self.fingerprint,
            observations,
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(49 + self.records.len() * 17);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(self.granularity as u8);
        buf.extend_from_slice(&self.fingerprint);
        buf.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            buf.extend_from_slice(&r.site.to_le_bytes());
            buf.push(r.kind as u8);
            buf.extend_from_slice(&r.addr.to_le_bytes());
            buf.extend_from_slice(&r.size.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::parse(&bytes)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("trace file: {m}"));
        if bytes.len() < 49 {
            return Err(bad("truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let granularity = Granularity::from_u8(bytes[8]).ok_or_else(|| bad("bad granularity"))?;
        let fingerprint: [u8; 32] = bytes[9..41].try_into().unwrap();
        let count = u64::from_le_bytes(bytes[41..49].try_into().unwrap()) as usize;
        let body = &bytes[49..];
        if body.len() != count.checked_mul(17).ok_or_else(|| bad("bad count"))? {
            return Err(bad(&format!("expected {count} records, found {} bytes", body.len())));
        }
        let records = body
            .chunks_exact(17)
            .map(|c| {
                Ok(TraceRecord {
                    site: u32::from_le_bytes(c[0..4].try_into().unwrap()),
                    kind: AccessKind::from_u8(c[4]).ok_or_else(|| bad("bad access kind"))?,
                    addr: u64::from_le_bytes(c[5..13].try_into().unwrap()),
                    size: u32::from_le_bytes(c[13..17].try_into().unwrap()),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            granularity,
            fingerprint,
            records,
        })
    }

    /// `seq,site,kind,addr,size` with hex addresses.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("seq,site,kind,addr,size\n");
        for (i, r) in self.records.iter().enumerate() {
            let site = if r.site == REDACTED_SITE {
                String::new()
            } else {
                super::verify::site_name(r.site)
            };
            let _ = writeln!(s, "{i},{site},{},{:#x},{}", r.kind.name(), r.addr, r.size);
        }
        s
    }
}
