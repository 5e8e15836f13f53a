//! Core trace types and page arithmetic.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Nanoseconds since the trace epoch.
pub type Nanos = u64;

pub const NANOS_PER_SEC: u64 = 1_000_000_000;

/// Load or store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Load,
    Store,
}

/// Memory hierarchy level that served a sampled access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    L1,
    L2,
    L3,
    Lfb,
    Dram,
    Nvm,
    Unknown,
}

impl Level {
    /// Served by DRAM or NVM, i.e. missed every cache.
    pub fn is_external(self) -> bool {
        matches!(self, Level::Dram | Level::Nvm)
    }

    /// Served by memory, or of unknown origin. Synthetic traces use
    /// `Unknown` as a placeholder for accesses whose tier the simulator picks.
    pub fn reaches_memory(self) -> bool {
        matches!(self, Level::Dram | Level::Nvm | Level::Unknown)
    }

    pub fn tier(self) -> Option<Tier> {
        match self {
            Level::Dram => Some(Tier::Dram),
            Level::Nvm => Some(Tier::Nvm),
            _ => None,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Level::L1 => "L1",
            Level::L2 => "L2",
            Level::L3 => "L3",
            Level::Lfb => "LFB",
            Level::Dram => "DRAM",
            Level::Nvm => "NVM",
            Level::Unknown => "NA",
        }
    }
}

impl From<Tier> for Level {
    fn from(t: Tier) -> Self {
        match t {
            Tier::Dram => Level::Dram,
            Tier::Nvm => Level::Nvm,
        }
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "L1" => Level::L1,
            "L2" => Level::L2,
            "L3" => Level::L3,
            "LFB" => Level::Lfb,
            "DRAM" => Level::Dram,
            "NVM" | "PMEM" => Level::Nvm,
            "NA" | "UNKNOWN" => Level::Unknown,
            other => return Err(format!("unknown level token {other:?}")),
        })
    }
}

/// TLB outcome preceding the access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TlbOutcome {
    Hit,
    Miss,
    Unknown,
}

impl TlbOutcome {
    pub fn token(self) -> &'static str {
        match self {
            TlbOutcome::Hit => "HIT",
            TlbOutcome::Miss => "MISS",
            TlbOutcome::Unknown => "NA",
        }
    }
}

impl FromStr for TlbOutcome {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "HIT" => TlbOutcome::Hit,
            "MISS" => TlbOutcome::Miss,
            "NA" => TlbOutcome::Unknown,
            other => return Err(format!("unknown tlb token {other:?}")),
        })
    }
}

/// One sampled load or store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MemorySample {
    pub timestamp: Nanos,
    pub thread_id: u16,
    pub addr: u64,
    pub op: Op,
    pub level: Level,
    /// CPU cycles.
    pub latency: u32,
    pub tlb: TlbOutcome,
}

impl MemorySample {
    pub fn is_external(&self) -> bool {
        self.level.is_external()
    }

    /// Whether this sample counts towards external-access metrics. Stores are
    /// excluded unless `include_stores` is set.
    pub fn counts_external(&self, include_stores: bool) -> bool {
        self.level.is_external() && (include_stores || self.op == Op::Load)
    }

    /// Whether this sample is a memory access that a placement policy prices.
    pub fn counts_memory_access(&self, include_stores: bool) -> bool {
        self.level.reaches_memory() && (include_stores || self.op == Op::Load)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AllocKind {
    Mmap,
    Munmap,
}

/// An `mmap` or `munmap` call.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AllocationEvent {
    pub timestamp: Nanos,
    pub kind: AllocKind,
    pub base: u64,
    pub length: u64,
    pub callstack_id: u64,
}

impl AllocationEvent {
    pub fn end(&self) -> u64 {
        self.base.saturating_add(self.length)
    }
}

/// Dense object identifier assigned in creation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub u32);

impl ObjectId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A live memory object: one address range over a half-open lifetime.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectRecord {
    pub object_id: ObjectId,
    pub base: u64,
    pub length: u64,
    /// `[alive_start, alive_end)`; `alive_end` is the trace end when the
    /// object is never unmapped.
    pub alive_start: Nanos,
    pub alive_end: Nanos,
    pub callstack_id: u64,
    /// Set on residual pieces produced by a partial `munmap`.
    pub split_from: Option<ObjectId>,
}

impl ObjectRecord {
    pub fn end(&self) -> u64 {
        self.base + self.length
    }

    pub fn contains(&self, addr: u64, t: Nanos) -> bool {
        self.base <= addr && addr < self.end() && self.alive_start <= t && t < self.alive_end
    }
}

/// Memory tier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    #[serde(rename = "DRAM")]
    Dram,
    #[serde(rename = "NVM")]
    Nvm,
}

impl Tier {
    pub const ALL: [Tier; 2] = [Tier::Dram, Tier::Nvm];

    pub fn index(self) -> usize {
        match self {
            Tier::Dram => 0,
            Tier::Nvm => 1,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Tier::Dram => "DRAM",
            Tier::Nvm => "NVM",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "DRAM" => Ok(Tier::Dram),
            "NVM" | "PMEM" => Ok(Tier::Nvm),
            other => Err(format!("unknown tier {other:?}")),
        }
    }
}

/// A validated power-of-two page size in bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct PageSize(u64);

impl PageSize {
    pub const DEFAULT: PageSize = PageSize(4096);

    pub fn new(bytes: u64) -> Result<Self> {
        if bytes == 0 || !bytes.is_power_of_two() {
            return Err(Error::Config(format!(
                "page_size must be a non-zero power of two, got {bytes}"
            )));
        }
        Ok(PageSize(bytes))
    }

    pub fn bytes(self) -> u64 {
        self.0
    }

    pub fn page_of(self, addr: u64) -> u64 {
        addr >> self.0.trailing_zeros()
    }

    pub fn align_down(self, addr: u64) -> u64 {
        addr & !(self.0 - 1)
    }

    /// Rounds up to the next page boundary, saturating at the last aligned
    /// address below `u64::MAX`.
    pub fn align_up(self, addr: u64) -> u64 {
        match addr.checked_add(self.0 - 1) {
            Some(v) => self.align_down(v),
            None => self.align_down(u64::MAX),
        }
    }

    /// First byte address of page `page`.
    pub fn page_base(self, page: u64) -> u64 {
        page << self.0.trailing_zeros()
    }
}

impl Default for PageSize {
    fn default() -> Self {
        PageSize::DEFAULT
    }
}

impl TryFrom<u64> for PageSize {
    type Error = Error;

    fn try_from(v: u64) -> Result<Self> {
        PageSize::new(v)
    }
}

impl From<PageSize> for u64 {
    fn from(p: PageSize) -> u64 {
        p.0
    }
}

/// `floor(addr / page_size)`; `page_size` must be a non-zero power of two.
pub fn page_of(addr: u64, page_size: u64) -> Result<u64> {
    Ok(PageSize::new(page_size)?.page_of(addr))
}
