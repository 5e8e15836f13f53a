//! Migration event log: CSV form and residency replay.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, Write};

use crate::trace::{MemorySample, Nanos, PageSize, Tier};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromoteReason {
    /// DRAM had room below the high watermark.
    FreeDram,
    /// Hint-fault latency under the threshold, paid with rate-limit tokens.
    Threshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DemoteCause {
    Kswapd,
    /// Made room for a promotion.
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MigrationKind {
    /// First touch placed the page.
    Commit(Tier),
    Promote(PromoteReason),
    Demote(DemoteCause),
    /// Unmapped while resident on the given tier.
    Release(Tier),
}

impl fmt::Display for MigrationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (k, d) = match self {
            MigrationKind::Commit(t) => ("COMMIT", t.token()),
            MigrationKind::Promote(PromoteReason::FreeDram) => ("PROMOTE", "FREE_DRAM"),
            MigrationKind::Promote(PromoteReason::Threshold) => ("PROMOTE", "THRESHOLD"),
            MigrationKind::Demote(DemoteCause::Kswapd) => ("DEMOTE", "KSWAPD"),
            MigrationKind::Demote(DemoteCause::Direct) => ("DEMOTE", "DIRECT"),
            MigrationKind::Release(t) => ("RELEASE", t.token()),
        };
        write!(f, "{k},{d}")
    }
}

impl MigrationKind {
    fn parse(kind: &str, detail: &str) -> Option<MigrationKind> {
        Some(match (kind, detail) {
            ("COMMIT", t) => MigrationKind::Commit(t.parse().ok()?),
            ("PROMOTE", "FREE_DRAM") => MigrationKind::Promote(PromoteReason::FreeDram),
            ("PROMOTE", "THRESHOLD") => MigrationKind::Promote(PromoteReason::Threshold),
            ("DEMOTE", "KSWAPD") => MigrationKind::Demote(DemoteCause::Kswapd),
            ("DEMOTE", "DIRECT") => MigrationKind::Demote(DemoteCause::Direct),
            ("RELEASE", t) => MigrationKind::Release(t.parse().ok()?),
            _ => return None,
        })
    }

    /// Tier the page is on after the event, `None` once released.
    pub fn tier_after(self) -> Option<Tier> {
        match self {
            MigrationKind::Commit(t) => Some(t),
            MigrationKind::Promote(_) => Some(Tier::Dram),
            MigrationKind::Demote(_) => Some(Tier::Nvm),
            MigrationKind::Release(_) => None,
        }
    }
}

/// One residency change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MigrationEvent {
    /// Number of samples processed before this event. Events caused by
    /// sample `i` carry `seq = i`.
    pub seq: u64,
    pub timestamp: Nanos,
    pub page: u64,
    pub kind: MigrationKind,
}

pub const MIGRATION_LOG_HEADER: &str = "seq,timestamp_ns,page,kind,detail";

pub fn write_migration_log<W: Write>(mut w: W, log: &[MigrationEvent]) -> io::Result<()> {
    writeln!(w, "{MIGRATION_LOG_HEADER}")?;
    for e in log {
        writeln!(w, "{},{},{:#x},{}", e.seq, e.timestamp, e.page, e.kind)?;
    }
    Ok(())
}

pub fn read_migration_log<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<MigrationEvent>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.is_empty() || line == MIGRATION_LOG_HEADER {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::parse(
                source_name,
                n,
                format!("expected 5 fields, found {}", f.len()),
            ));
        }
        let num = |s: &str, what: &str| {
            s.parse::<u64>()
                .map_err(|_| Error::parse(source_name, n, format!("bad {what} {s:?}")))
        };
        let page = u64::from_str_radix(f[2].trim_start_matches("0x"), 16)
            .map_err(|_| Error::parse(source_name, n, format!("bad page {:?}", f[2])))?;
        let kind = MigrationKind::parse(f[3], f[4])
            .ok_or_else(|| Error::parse(source_name, n, format!("bad event {},{}", f[3], f[4])))?;
        out.push(MigrationEvent {
            seq: num(f[0], "seq")?,
            timestamp: num(f[1], "timestamp")?,
            page,
            kind,
        });
    }
    Ok(out)
}

/// Labels each sample with the tier its page occupied when the simulator
/// served it, by walking the log. Samples the simulator did not process (or
/// whose page is not resident) get `None`.
pub fn replay_residency(
    log: &[MigrationEvent],
    samples: &[MemorySample],
    page_size: PageSize,
    include_stores: bool,
) -> Vec<Option<Tier>> {
    let mut tier_of: HashMap<u64, Tier> = HashMap::new();
    let mut next = 0;
    let mut out = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        while next < log.len() && log[next].seq <= i as u64 {
            let e = &log[next];
            match e.kind.tier_after() {
                Some(t) => tier_of.insert(e.page, t),
                None => tier_of.remove(&e.page),
            };
            next += 1;
        }
        out.push(if s.counts_memory_access(include_stores) {
            tier_of.get(&page_size.page_of(s.addr)).copied()
        } else {
            None
        });
    }
    out
}

/// Copies of `samples` whose level is replaced by the resolved tier, so
/// the characterization metrics can run on simulated placement.
pub fn relabel_samples(samples: &[MemorySample], resolved: &[Option<Tier>]) -> Vec<MemorySample> {
    samples
        .iter()
        .zip(resolved)
        .map(|(s, r)| match r {
            Some(t) => MemorySample {
                level: (*t).into(),
                ..*s
            },
            None => *s,
        })
        .collect()
}
