//! Characterization metrics: tier split and cost tables, page touch
//! histogram, two-touch reuse statistics, promotion patterns, memory usage
//! timelines and the promotion/DRAM-load correlation.
//!
//! Every function here is a deterministic function of its inputs. A "touch"
//! is one sample. Percentiles use the nearest-rank method and standard
//! deviations are population deviations.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use crate::autonuma::{MigrationEvent, MigrationKind};
use crate::mapping::{ObjectTable, Profiling};
use crate::scalar::{ratio, ratio_u128};
use crate::stats::{self, ReuseStats};
use crate::trace::{
    Level, MemorySample, Nanos, ObjectId, Op, PageSize, Tier, TlbOutcome, NANOS_PER_SEC,
};
use crate::Scalar;

fn fmt_opt<F: Scalar>(v: Option<F>) -> String {
    match v {
        Some(x) => format!("{:.8}", x.as_f64()),
        None => "NA".to_owned(),
    }
}

/// Where external samples landed and what they cost.
#[derive(Clone, Debug, PartialEq)]
pub struct TierSplit<F> {
    pub total_samples: u64,
    pub external_samples: u64,
    pub samples_by_tier: [u64; 2],
    /// Observed latency sums in cycles.
    pub cost_by_tier: [u64; 2],
    /// `[tier][0 = TLB hit, 1 = TLB miss]`; unknown TLB outcomes are left out.
    pub count_by_tier_tlb: [[u64; 2]; 2],
    pub cost_by_tier_tlb: [[u64; 2]; 2],
    /// External samples over all samples.
    pub external_fraction: Option<F>,
    /// Share of external samples per tier.
    pub tier_share: [Option<F>; 2],
    /// Share of external latency per tier.
    pub cost_share: [Option<F>; 2],
    /// Mean cycles per (tier, TLB hit/miss).
    pub mean_cost: [[Option<F>; 2]; 2],
}

impl<F: Scalar> TierSplit<F> {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "metric,value")?;
        writeln!(w, "total_samples,{}", self.total_samples)?;
        writeln!(w, "external_samples,{}", self.external_samples)?;
        writeln!(w, "dram_samples,{}", self.samples_by_tier[0])?;
        writeln!(w, "nvm_samples,{}", self.samples_by_tier[1])?;
        writeln!(w, "dram_cost_cycles,{}", self.cost_by_tier[0])?;
        writeln!(w, "nvm_cost_cycles,{}", self.cost_by_tier[1])?;
        writeln!(w, "external_fraction,{}", fmt_opt(self.external_fraction))?;
        writeln!(w, "dram_share,{}", fmt_opt(self.tier_share[0]))?;
        writeln!(w, "nvm_share,{}", fmt_opt(self.tier_share[1]))?;
        writeln!(w, "dram_cost_share,{}", fmt_opt(self.cost_share[0]))?;
        writeln!(w, "nvm_cost_share,{}", fmt_opt(self.cost_share[1]))?;
        for tier in Tier::ALL {
            for (j, tlb) in ["tlb_hit", "tlb_miss"].iter().enumerate() {
                writeln!(
                    w,
                    "mean_cost_{}_{tlb},{}",
                    tier.token().to_lowercase(),
                    fmt_opt(self.mean_cost[tier.index()][j])
                )?;
            }
        }
        Ok(())
    }
}

/// External fraction, tier shares, cost shares and the mean
/// cost per (tier, TLB outcome). Cost shares are the per-tier latency sums
/// divided by the external latency sum.
pub fn tier_split<F: Scalar>(samples: &[MemorySample], include_stores: bool) -> TierSplit<F> {
    let mut samples_by_tier = [0u64; 2];
    let mut cost_by_tier = [0u64; 2];
    let mut count_by_tier_tlb = [[0u64; 2]; 2];
    let mut cost_by_tier_tlb = [[0u64; 2]; 2];
    for s in samples.iter().filter(|s| s.counts_external(include_stores)) {
        let t = s.level.tier().expect("external").index();
        samples_by_tier[t] += 1;
        cost_by_tier[t] += s.latency as u64;
        let j = match s.tlb {
            TlbOutcome::Hit => 0,
            TlbOutcome::Miss => 1,
            TlbOutcome::Unknown => continue,
        };
        count_by_tier_tlb[t][j] += 1;
        cost_by_tier_tlb[t][j] += s.latency as u64;
    }
    let external = samples_by_tier[0] + samples_by_tier[1];
    let cost_total = cost_by_tier[0] as u128 + cost_by_tier[1] as u128;
    let mut mean_cost = [[None; 2]; 2];
    for t in 0..2 {
        for j in 0..2 {
            mean_cost[t][j] = ratio(cost_by_tier_tlb[t][j], count_by_tier_tlb[t][j]);
        }
    }
    TierSplit {
        total_samples: samples.len() as u64,
        external_samples: external,
        samples_by_tier,
        cost_by_tier,
        count_by_tier_tlb,
        cost_by_tier_tlb,
        external_fraction: ratio(external, samples.len() as u64),
        tier_share: [
            ratio(samples_by_tier[0], external),
            ratio(samples_by_tier[1], external),
        ],
        cost_share: [
            ratio_u128(cost_by_tier[0] as u128, cost_total),
            ratio_u128(cost_by_tier[1] as u128, cost_total),
        ],
        mean_cost,
    }
}

/// Pages and accesses bucketed by touch count: 1, 2, 3+.
#[derive(Clone, Debug, PartialEq)]
pub struct TouchHistogram<F> {
    pub pages: [u64; 3],
    pub accesses: [u64; 3],
    pub page_shares: [F; 3],
    pub access_shares: [F; 3],
}

impl<F: Scalar> TouchHistogram<F> {
    pub fn total_pages(&self) -> u64 {
        self.pages.iter().sum()
    }

    pub fn total_accesses(&self) -> u64 {
        self.accesses.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W, scope: &str) -> io::Result<()> {
        for (i, label) in ["1", "2", "3+"].iter().enumerate() {
            writeln!(
                w,
                "{scope},{label},{},{},{:.8},{:.8}",
                self.pages[i],
                self.accesses[i],
                self.page_shares[i].as_f64(),
                self.access_shares[i].as_f64()
            )?;
        }
        Ok(())
    }
}

pub const TOUCH_HISTOGRAM_HEADER: &str = "scope,touches,pages,accesses,page_share,access_share";

/// Groups external samples (optionally of one tier) by page.
pub fn touch_histogram<F: Scalar>(
    samples: &[MemorySample],
    page_size: PageSize,
    tier_filter: Option<Tier>,
    include_stores: bool,
) -> TouchHistogram<F> {
    let mut per_page: HashMap<u64, u64> = HashMap::new();
    for s in samples.iter().filter(|s| s.counts_external(include_stores)) {
        if tier_filter.is_some_and(|t| s.level.tier() != Some(t)) {
            continue;
        }
        *per_page.entry(page_size.page_of(s.addr)).or_default() += 1;
    }
    let mut pages = [0u64; 3];
    let mut accesses = [0u64; 3];
    for &c in per_page.values() {
        let b = (c.min(3) - 1) as usize;
        pages[b] += 1;
        accesses[b] += c;
    }
    let tp: u64 = pages.iter().sum();
    let ta: u64 = accesses.iter().sum();
    let share = |n: u64, d: u64| ratio::<F>(n, d).unwrap_or_else(F::zero);
    TouchHistogram {
        pages,
        accesses,
        page_shares: [
            share(pages[0], tp),
            share(pages[1], tp),
            share(pages[2], tp),
        ],
        access_shares: [
            share(accesses[0], ta),
            share(accesses[1], ta),
            share(accesses[2], ta),
        ],
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct PageTouches {
    count: u64,
    first: Option<(Nanos, Level)>,
    second: Option<(Nanos, Level)>,
}

fn collect_touches<'a>(
    samples: impl Iterator<Item = &'a MemorySample>,
    page_size: PageSize,
) -> HashMap<u64, PageTouches> {
    let mut per_page: HashMap<u64, PageTouches> = HashMap::new();
    for s in samples {
        let e = per_page.entry(page_size.page_of(s.addr)).or_default();
        e.count += 1;
        match e.count {
            1 => e.first = Some((s.timestamp, s.level)),
            2 => e.second = Some((s.timestamp, s.level)),
            _ => {}
        }
    }
    per_page
}

/// Restriction applied before two-touch reuse analysis.
#[derive(Clone, Copy, Debug)]
pub struct ReuseFilter<'a> {
    pub tier: Tier,
    /// Keep only samples attributed to this object.
    pub object: Option<(&'a [Option<ObjectId>], ObjectId)>,
    pub include_stores: bool,
}

/// Gaps in nanoseconds between the two samples of every page touched
/// exactly twice under `filter`, ordered by page index.
pub fn two_touch_gaps(
    samples: &[MemorySample],
    page_size: PageSize,
    filter: ReuseFilter<'_>,
) -> Vec<Nanos> {
    let selected = samples.iter().enumerate().filter_map(|(i, s)| {
        if !s.counts_external(filter.include_stores) || s.level.tier() != Some(filter.tier) {
            return None;
        }
        if let Some((attr, id)) = filter.object {
            if attr[i] != Some(id) {
                return None;
            }
        }
        Some(s)
    });
    let touches = collect_touches(selected, page_size);
    let mut pages: Vec<(&u64, &PageTouches)> =
        touches.iter().filter(|(_, t)| t.count == 2).collect();
    pages.sort_unstable_by_key(|(p, _)| **p);
    pages
        .into_iter()
        .map(|(_, t)| t.second.unwrap().0 - t.first.unwrap().0)
        .collect()
}

/// Reuse statistics in seconds; `None` when no page qualifies.
pub fn reuse_stats<F: Scalar>(
    samples: &[MemorySample],
    page_size: PageSize,
    filter: ReuseFilter<'_>,
) -> Option<ReuseStats<F>> {
    let secs: Vec<F> = two_touch_gaps(samples, page_size, filter)
        .into_iter()
        .map(|g| <F as Scalar>::from_u64(g) / <F as Scalar>::from_u64(NANOS_PER_SEC))
        .collect();
    ReuseStats::from_values(&secs)
}

pub const REUSE_STATS_HEADER: &str =
    "scope,tier,object_id,pages,min_s,p25_nearest_rank_s,p50_nearest_rank_s,mean_s,p75_nearest_rank_s,max_s,stddev_population_s";

pub fn write_reuse_row<W: Write, F: Scalar>(
    mut w: W,
    scope: &str,
    tier: Tier,
    object: Option<ObjectId>,
    stats: Option<&ReuseStats<F>>,
) -> io::Result<()> {
    let obj = object
        .map(|o| o.to_string())
        .unwrap_or_else(|| "ALL".into());
    match stats {
        Some(s) => writeln!(
            w,
            "{scope},{tier},{obj},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}",
            s.count,
            s.min.as_f64(),
            s.p25.as_f64(),
            s.p50.as_f64(),
            s.mean.as_f64(),
            s.p75.as_f64(),
            s.max.as_f64(),
            s.stddev.as_f64()
        ),
        None => writeln!(w, "{scope},{tier},{obj},0,NA,NA,NA,NA,NA,NA,NA"),
    }
}

/// How pages with exactly two external samples moved between tiers.
#[derive(Clone, Debug, PartialEq)]
pub struct PromotionPatterns<F> {
    pub two_touch_pages: u64,
    /// First sample on NVM, later sample on DRAM.
    pub promoted: u64,
    /// First sample on DRAM, later sample on NVM.
    pub demoted: u64,
    pub promoted_fraction: Option<F>,
    pub demoted_fraction: Option<F>,
}

impl<F: Scalar> PromotionPatterns<F> {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "metric,value")?;
        writeln!(w, "two_touch_pages,{}", self.two_touch_pages)?;
        writeln!(w, "nvm_then_dram_pages,{}", self.promoted)?;
        writeln!(w, "dram_then_nvm_pages,{}", self.demoted)?;
        writeln!(
            w,
            "nvm_then_dram_fraction,{}",
            fmt_opt(self.promoted_fraction)
        )?;
        writeln!(
            w,
            "dram_then_nvm_fraction,{}",
            fmt_opt(self.demoted_fraction)
        )
    }
}

pub fn detect_promotions<F: Scalar>(
    samples: &[MemorySample],
    page_size: PageSize,
    include_stores: bool,
) -> PromotionPatterns<F> {
    let touches = collect_touches(
        samples.iter().filter(|s| s.counts_external(include_stores)),
        page_size,
    );
    let (mut n, mut promoted, mut demoted) = (0, 0, 0);
    for t in touches.values().filter(|t| t.count == 2) {
        n += 1;
        let ((t1, l1), (t2, l2)) = (t.first.unwrap(), t.second.unwrap());
        if t2 > t1 {
            match (l1, l2) {
                (Level::Nvm, Level::Dram) => promoted += 1,
                (Level::Dram, Level::Nvm) => demoted += 1,
                _ => {}
            }
        }
    }
    PromotionPatterns {
        two_touch_pages: n,
        promoted,
        demoted,
        promoted_fraction: ratio(promoted, n),
        demoted_fraction: ratio(demoted, n),
    }
}

/// The object with the most external samples on `tier` (lowest id on ties).
pub fn top_object_on(profiling: &Profiling, tier: Tier) -> Option<ObjectId> {
    profiling
        .profiles
        .iter()
        .filter(|p| p.samples_on(tier) > 0)
        .max_by(|a, b| {
            a.samples_on(tier)
                .cmp(&b.samples_on(tier))
                .then(b.object_id.cmp(&a.object_id))
        })
        .map(|p| p.object_id)
}

/// Peak resident bytes per time bucket.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UsageTimeline {
    pub bucket: Nanos,
    pub rows: Vec<UsageRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UsageRow {
    pub start: Nanos,
    /// Peak of DRAM + NVM (or of mapped bytes when tiers are unknown).
    pub total: u64,
    pub dram: Option<u64>,
    pub nvm: Option<u64>,
}

impl UsageTimeline {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "bucket_start_s,total_bytes,dram_bytes,nvm_bytes")?;
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
        for r in &self.rows {
            writeln!(
                w,
                "{:.3},{},{},{}",
                r.start as f64 / NANOS_PER_SEC as f64,
                r.total,
                opt(r.dram),
                opt(r.nvm)
            )?;
        }
        Ok(())
    }
}

fn bucket_count(trace_end: Nanos, bucket: Nanos) -> usize {
    trace_end.div_ceil(bucket) as usize
}

/// Peak per bucket of a step function given as sorted `(time, delta)` changes
/// on `N` series.
fn peak_series<const N: usize>(
    changes: &[(Nanos, [i128; N])],
    bucket: Nanos,
    trace_end: Nanos,
) -> Vec<[u64; N]> {
    let nb = bucket_count(trace_end, bucket);
    let mut out = vec![[0u64; N]; nb];
    let mut cur = [0i128; N];
    let mut i = 0;
    for (b, slot) in out.iter_mut().enumerate() {
        let start = b as u64 * bucket;
        let end = start.saturating_add(bucket);
        // apply everything at or before bucket start
        while i < changes.len() && changes[i].0 <= start {
            for k in 0..N {
                cur[k] += changes[i].1[k];
            }
            i += 1;
        }
        let mut peak = cur;
        while i < changes.len() && changes[i].0 < end {
            let t = changes[i].0;
            while i < changes.len() && changes[i].0 == t {
                for k in 0..N {
                    cur[k] += changes[i].1[k];
                }
                i += 1;
            }
            for k in 0..N {
                peak[k] = peak[k].max(cur[k]);
            }
        }
        for k in 0..N {
            slot[k] = peak[k].max(0) as u64;
        }
    }
    out
}

/// Trace-only timeline: mapped bytes from the object table, tiers unknown.
pub fn usage_timeline_trace(table: &ObjectTable, bucket: Nanos, trace_end: Nanos) -> UsageTimeline {
    assert!(bucket > 0, "bucket must be positive");
    let mut changes: Vec<(Nanos, [i128; 1])> = Vec::new();
    for r in table
        .records()
        .iter()
        .filter(|r| r.alive_start < r.alive_end)
    {
        changes.push((r.alive_start, [r.length as i128]));
        changes.push((r.alive_end, [-(r.length as i128)]));
    }
    changes.sort_by_key(|c| c.0);
    let rows = peak_series(&changes, bucket, trace_end)
        .into_iter()
        .enumerate()
        .map(|(b, [v])| UsageRow {
            start: b as u64 * bucket,
            total: v,
            dram: None,
            nvm: None,
        })
        .collect();
    UsageTimeline { bucket, rows }
}

/// Timeline of simulated residency per tier, rebuilt from the migration log.
pub fn usage_timeline_sim(
    log: &[MigrationEvent],
    page_size: PageSize,
    bucket: Nanos,
    trace_end: Nanos,
) -> UsageTimeline {
    assert!(bucket > 0, "bucket must be positive");
    let ps = page_size.bytes() as i128;
    let changes: Vec<(Nanos, [i128; 2])> = log
        .iter()
        .map(|e| {
            let d = match e.kind {
                MigrationKind::Commit(Tier::Dram) => [ps, 0],
                MigrationKind::Commit(Tier::Nvm) => [0, ps],
                MigrationKind::Promote(_) => [ps, -ps],
                MigrationKind::Demote(_) => [-ps, ps],
                MigrationKind::Release(Tier::Dram) => [-ps, 0],
                MigrationKind::Release(Tier::Nvm) => [0, -ps],
            };
            (e.timestamp, d)
        })
        .collect();
    let dram_nvm = peak_series(&changes, bucket, trace_end);
    // total is peaked separately: the tier peaks need not coincide
    let totals: Vec<(Nanos, [i128; 1])> =
        changes.iter().map(|(t, d)| (*t, [d[0] + d[1]])).collect();
    let total = peak_series(&totals, bucket, trace_end);
    let rows = dram_nvm
        .into_iter()
        .zip(total)
        .enumerate()
        .map(|(b, ([d, n], [t]))| UsageRow {
            start: b as u64 * bucket,
            total: t,
            dram: Some(d),
            nvm: Some(n),
        })
        .collect();
    UsageTimeline { bucket, rows }
}

/// Per-window DRAM loads versus promoted pages.
#[derive(Clone, Debug, PartialEq)]
pub struct PromotionCorrelation<F> {
    pub window: Nanos,
    /// `(window start, DRAM loads, pages promoted)`.
    pub rows: Vec<(Nanos, u64, u64)>,
    /// Pearson r over windows; `None` with fewer than two windows or a
    /// constant series.
    pub pearson_r: Option<F>,
}

impl<F: Scalar> PromotionCorrelation<F> {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "window_start_s,dram_loads,pages_promoted,pearson_r")?;
        let r = fmt_opt(self.pearson_r);
        for &(t, l, p) in &self.rows {
            writeln!(w, "{:.3},{l},{p},{r}", t as f64 / NANOS_PER_SEC as f64)?;
        }
        Ok(())
    }
}

/// `resolved[i]` is the tier that served sample `i` (for example from the
/// simulator's per-access log), `None` when it did not reach memory.
pub fn promotion_access_correlation<F: Scalar>(
    samples: &[MemorySample],
    resolved: &[Option<Tier>],
    log: &[MigrationEvent],
    window: Nanos,
    trace_end: Nanos,
) -> PromotionCorrelation<F> {
    assert!(window > 0, "window must be positive");
    let nb = bucket_count(trace_end, window).max(1);
    let mut loads = vec![0u64; nb];
    let mut promos = vec![0u64; nb];
    for (s, r) in samples.iter().zip(resolved) {
        if s.op == Op::Load && *r == Some(Tier::Dram) {
            loads[((s.timestamp / window) as usize).min(nb - 1)] += 1;
        }
    }
    for e in log {
        if matches!(e.kind, MigrationKind::Promote(_)) {
            promos[((e.timestamp / window) as usize).min(nb - 1)] += 1;
        }
    }
    let xs: Vec<F> = loads.iter().map(|&v| <F as Scalar>::from_u64(v)).collect();
    let ys: Vec<F> = promos.iter().map(|&v| <F as Scalar>::from_u64(v)).collect();
    PromotionCorrelation {
        window,
        rows: (0..nb)
            .map(|i| (i as u64 * window, loads[i], promos[i]))
            .collect(),
        pearson_r: stats::pearson(&xs, &ys),
    }
}

/// Samples per object and tier, for the top-N object figure.
pub fn object_tier_shares(
    profiling: &Profiling,
    tier: Tier,
    top: usize,
) -> Vec<(ObjectId, u64, f64)> {
    let total: u64 = profiling
        .profiles
        .iter()
        .map(|p| p.samples_on(tier))
        .sum::<u64>()
        + profiling.unmapped_by_tier[tier.index()];
    let mut v: Vec<(ObjectId, u64)> = profiling
        .profiles
        .iter()
        .map(|p| (p.object_id, p.samples_on(tier)))
        .filter(|&(_, n)| n > 0)
        .collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v.truncate(top);
    v.into_iter()
        .map(|(id, n)| {
            (
                id,
                n,
                if total == 0 {
                    0.0
                } else {
                    n as f64 / total as f64
                },
            )
        })
        .collect()
}

/// Count of samples by level, used by reports.
pub fn level_counts(samples: &[MemorySample]) -> BTreeMap<&'static str, u64> {
    let mut m = BTreeMap::new();
    for s in samples {
        *m.entry(s.level.token()).or_default() += 1;
    }
    m
}
