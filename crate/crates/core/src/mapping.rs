//! Object table construction and sample-to-object attribution.
//!
//! Every `mmap` opens an object; a `munmap` closes every live object it
//! intersects and re-opens the parts it did not cover as residual objects
//! that keep the original call stack. Lookups go through a segment index:
//! the address space is cut at every object boundary, and each segment holds
//! the objects covering it sorted by lifetime. Objects sharing a segment never
//! overlap in time, so a lookup is two binary searches.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rayon::prelude::*;

use crate::placement::{Density, DensityBasis};
use crate::trace::{AllocKind, AllocationEvent, MemorySample, Nanos, ObjectId, ObjectRecord, Tier};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Live {
    end: u64,
    id: ObjectId,
    event_index: usize,
}

/// Immutable table of memory objects with a time-aware address index.
#[derive(Clone, Debug)]
pub struct ObjectTable {
    records: Vec<ObjectRecord>,
    bounds: Vec<u64>,
    seg_offsets: Vec<usize>,
    seg_entries: Vec<u32>,
    warnings: Vec<String>,
}

/// Builds the object table from canonical, time-sorted allocation events.
///
/// Objects never unmapped stay alive until `trace_end` (exclusive).
pub fn build_object_table(events: &[AllocationEvent], trace_end: Nanos) -> Result<ObjectTable> {
    let mut records: Vec<ObjectRecord> = Vec::new();
    let mut live: BTreeMap<u64, Live> = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut prev_t = 0;

    for (idx, ev) in events.iter().enumerate() {
        if ev.timestamp < prev_t {
            return Err(Error::Unsorted {
                stream: "allocation events",
                index: idx,
                timestamp: ev.timestamp,
                previous: prev_t,
            });
        }
        prev_t = ev.timestamp;
        let (b, e, t) = (ev.base, ev.end(), ev.timestamp);
        match ev.kind {
            AllocKind::Mmap => {
                if let Some((&lb, l)) = live.range(..e).next_back() {
                    if l.end > b {
                        let first = &events[l.event_index];
                        return Err(Error::OverlappingAllocation {
                            first_event: l.event_index,
                            first_time: first.timestamp,
                            first_base: lb,
                            first_end: l.end,
                            second_event: idx,
                            second_time: t,
                            second_base: b,
                            second_end: e,
                        });
                    }
                }
                let id = ObjectId(records.len() as u32);
                records.push(ObjectRecord {
                    object_id: id,
                    base: b,
                    length: ev.length,
                    alive_start: t,
                    alive_end: trace_end.max(t),
                    callstack_id: ev.callstack_id,
                    split_from: None,
                });
                live.insert(
                    b,
                    Live {
                        end: e,
                        id,
                        event_index: idx,
                    },
                );
            }
            AllocKind::Munmap => {
                let hit: Vec<(u64, Live)> = live
                    .range(..e)
                    .rev()
                    .take_while(|(_, l)| l.end > b)
                    .map(|(&k, &l)| (k, l))
                    .collect();
                if hit.is_empty() {
                    warnings.push(format!(
                        "event #{idx} (t={t}): MUNMAP [{b:#x}, {e:#x}) matches no live mapping"
                    ));
                    continue;
                }
                for (lb, l) in hit.into_iter().rev() {
                    live.remove(&lb);
                    let parent = &mut records[l.id.index()];
                    parent.alive_end = t;
                    let callstack_id = parent.callstack_id;
                    for (rb, re) in [(lb, b), (e, l.end)] {
                        if rb < re {
                            let id = ObjectId(records.len() as u32);
                            records.push(ObjectRecord {
                                object_id: id,
                                base: rb,
                                length: re - rb,
                                alive_start: t,
                                alive_end: trace_end.max(t),
                                callstack_id,
                                split_from: Some(l.id),
                            });
                            live.insert(
                                rb,
                                Live {
                                    end: re,
                                    id,
                                    event_index: l.event_index,
                                },
                            );
                        }
                    }
                }
            }
        }
    }
    ObjectTable::from_records(records, warnings)
}

impl ObjectTable {
    fn from_records(records: Vec<ObjectRecord>, warnings: Vec<String>) -> Result<ObjectTable> {
        let indexed: Vec<&ObjectRecord> = records
            .iter()
            .filter(|r| r.alive_start < r.alive_end && r.length > 0)
            .collect();
        let mut bounds: Vec<u64> = indexed.iter().flat_map(|r| [r.base, r.end()]).collect();
        bounds.sort_unstable();
        bounds.dedup();

        let mut pairs: Vec<(usize, u32)> = Vec::new();
        for r in &indexed {
            let lo = bounds.binary_search(&r.base).expect("bound present");
            let hi = bounds.binary_search(&r.end()).expect("bound present");
            pairs.extend((lo..hi).map(|s| (s, r.object_id.0)));
        }
        pairs.sort_unstable_by_key(|&(s, id)| {
            let r = &records[id as usize];
            (s, r.alive_start, r.alive_end, id)
        });

        let nseg = bounds.len().saturating_sub(1);
        let mut seg_offsets = vec![0usize; nseg + 1];
        for &(s, _) in &pairs {
            seg_offsets[s + 1] += 1;
        }
        for i in 0..nseg {
            seg_offsets[i + 1] += seg_offsets[i];
        }
        let seg_entries: Vec<u32> = pairs.iter().map(|&(_, id)| id).collect();

        for s in 0..nseg {
            let entries = &seg_entries[seg_offsets[s]..seg_offsets[s + 1]];
            for w in entries.windows(2) {
                let (a, b) = (&records[w[0] as usize], &records[w[1] as usize]);
                if a.alive_end > b.alive_start {
                    return Err(Error::Invariant(format!(
                        "objects {} and {} overlap in both address and time",
                        a.object_id, b.object_id
                    )));
                }
            }
        }

        Ok(ObjectTable {
            records,
            bounds,
            seg_offsets,
            seg_entries,
            warnings,
        })
    }

    pub fn records(&self) -> &[ObjectRecord] {
        &self.records
    }

    pub fn get(&self, id: ObjectId) -> Option<&ObjectRecord> {
        self.records.get(id.index())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Unmatched `munmap` events seen while building.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// The object live at `addr` at time `t`, if any.
    pub fn lookup(&self, addr: u64, t: Nanos) -> Option<ObjectId> {
        let i = self.bounds.partition_point(|&b| b <= addr);
        if i == 0 || i >= self.bounds.len() {
            return None;
        }
        let seg = i - 1;
        let entries = &self.seg_entries[self.seg_offsets[seg]..self.seg_offsets[seg + 1]];
        let j = entries.partition_point(|&id| self.records[id as usize].alive_start <= t);
        if j == 0 {
            return None;
        }
        let r = &self.records[entries[j - 1] as usize];
        (t < r.alive_end).then_some(r.object_id)
    }

    /// Attributes one sample; `None` means unmapped (stack, static, brk heap).
    pub fn attribute(&self, sample: &MemorySample) -> Option<ObjectId> {
        self.lookup(sample.addr, sample.timestamp)
    }

    /// Attributes every sample, in parallel, preserving order.
    pub fn attribute_all(&self, samples: &[MemorySample]) -> Vec<Option<ObjectId>> {
        samples.par_iter().map(|s| self.attribute(s)).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "object_id,base,length,alive_start_ns,alive_end_ns,callstack_id,split_from"
        )?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:#x},{},{},{},{},{}",
                r.object_id,
                r.base,
                r.length,
                r.alive_start,
                r.alive_end,
                r.callstack_id,
                r.split_from.map(|p| p.to_string()).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

/// Exclusive end time covering every event and sample: one past the last
/// timestamp seen.
pub fn trace_end(events: &[AllocationEvent], samples: &[MemorySample]) -> Nanos {
    let a = events.last().map(|e| e.timestamp).unwrap_or(0);
    let s = samples.last().map(|s| s.timestamp).unwrap_or(0);
    a.max(s) + 1
}

/// Per-object external access profile.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectProfile {
    pub object_id: ObjectId,
    pub callstack_id: u64,
    /// Bytes.
    pub size: u64,
    /// Samples that reached memory: DRAM, NVM, or an unresolved tier.
    pub samples_total: u64,
    pub samples_by_tier: [u64; 2],
    /// Observed latency sums, in cycles.
    pub cost_cycles_by_tier: [u64; 2],
    /// Every attributed sample, cache hits included.
    pub samples_all: u64,
    pub first_access: Nanos,
    pub last_access: Nanos,
}

impl ObjectProfile {
    pub fn samples_on(&self, tier: Tier) -> u64 {
        self.samples_by_tier[tier.index()]
    }

    pub fn density(&self, basis: DensityBasis) -> Density {
        let accesses = match basis {
            DensityBasis::External => self.samples_total,
            DensityBasis::All => self.samples_all,
        };
        Density::new(accesses, self.size)
    }
}

/// Result of [`profile_objects`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Profiling {
    /// One entry per object with at least one external sample, by object id.
    pub profiles: Vec<ObjectProfile>,
    /// External samples that fell outside every object, by tier.
    pub unmapped_by_tier: [u64; 2],
    pub unmapped_cost_by_tier: [u64; 2],
    /// Unattributed memory samples whose tier is unknown.
    pub unmapped_unknown_tier: u64,
}

impl Profiling {
    pub fn get(&self, id: ObjectId) -> Option<&ObjectProfile> {
        self.profiles
            .binary_search_by_key(&id, |p| p.object_id)
            .ok()
            .map(|i| &self.profiles[i])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "object_id,callstack_id,size_bytes,samples_external,samples_dram,samples_nvm,\
             cost_dram_cycles,cost_nvm_cycles,samples_all,density_external_per_mb,\
             density_all_per_mb,first_access_ns,last_access_ns"
        )?;
        for p in &self.profiles {
            let per_mb = |d: Density| d.as_float::<f64>() * 1e6;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{:.6},{:.6},{},{}",
                p.object_id,
                p.callstack_id,
                p.size,
                p.samples_total,
                p.samples_by_tier[0],
                p.samples_by_tier[1],
                p.cost_cycles_by_tier[0],
                p.cost_cycles_by_tier[1],
                p.samples_all,
                per_mb(p.density(DensityBasis::External)),
                per_mb(p.density(DensityBasis::All)),
                p.first_access,
                p.last_access
            )?;
        }
        Ok(())
    }
}

/// Aggregates attributed samples per object. Samples that reached memory
/// count towards `samples_total`; only those with a known tier feed the tier
/// counts and costs (observed latency). Stores are skipped unless
/// `include_stores`.
pub fn profile_objects(
    samples: &[MemorySample],
    attributions: &[Option<ObjectId>],
    table: &ObjectTable,
    include_stores: bool,
) -> Profiling {
    assert_eq!(
        samples.len(),
        attributions.len(),
        "one attribution per sample"
    );
    let mut acc: BTreeMap<ObjectId, ObjectProfile> = BTreeMap::new();
    let mut all_counts: BTreeMap<ObjectId, u64> = BTreeMap::new();
    let mut out = Profiling::default();

    for (s, a) in samples.iter().zip(attributions) {
        if let Some(id) = a {
            *all_counts.entry(*id).or_default() += 1;
        }
        if !s.counts_memory_access(include_stores) {
            continue;
        }
        let tier = s.level.tier();
        match a {
            None => match tier {
                Some(tier) => {
                    out.unmapped_by_tier[tier.index()] += 1;
                    out.unmapped_cost_by_tier[tier.index()] += s.latency as u64;
                }
                None => out.unmapped_unknown_tier += 1,
            },
            Some(id) => {
                let rec = table
                    .get(*id)
                    .expect("attribution refers to a table object");
                let p = acc.entry(*id).or_insert_with(|| ObjectProfile {
                    object_id: *id,
                    callstack_id: rec.callstack_id,
                    size: rec.length,
                    samples_total: 0,
                    samples_by_tier: [0; 2],
                    cost_cycles_by_tier: [0; 2],
                    samples_all: 0,
                    first_access: s.timestamp,
                    last_access: s.timestamp,
                });
                p.samples_total += 1;
                if let Some(tier) = tier {
                    p.samples_by_tier[tier.index()] += 1;
                    p.cost_cycles_by_tier[tier.index()] += s.latency as u64;
                }
                p.first_access = p.first_access.min(s.timestamp);
                p.last_access = p.last_access.max(s.timestamp);
            }
        }
    }
    out.profiles = acc
        .into_values()
        .map(|mut p| {
            p.samples_all = all_counts[&p.object_id];
            p
        })
        .collect();
    out
}
