//! Discrete-event model of kernel memory tiering with hint-fault driven
//! promotion, over a merged stream of allocation events and samples.
//!
//! Pages are committed on first touch (DRAM while it has a free page, then
//! NVM). When enabled, a periodic scanner arms a batch of resident pages in
//! page order; the next sampled access to an armed page is a hint fault.
//! Faulting NVM pages are promoted outright while DRAM sits below the high
//! watermark, otherwise only if the fault latency beats the hotness
//! threshold and the rate-limit token bucket can pay for the page. The
//! threshold adapts each window to the candidate volume, and kswapd demotes
//! the least recently accessed DRAM pages on scan ticks.

mod log;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

pub use log::{
    read_migration_log, relabel_samples, replay_residency, write_migration_log, DemoteCause,
    MigrationEvent, MigrationKind, PromoteReason, MIGRATION_LOG_HEADER,
};

use crate::config::RunConfig;
use crate::trace::{
    AllocKind, AllocationEvent, MemorySample, Nanos, ObjectId, Tier, NANOS_PER_SEC,
};
use crate::{Error, Result};

/// Page migration counters named after their kernel vmstat equivalents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TieringCounters {
    pub pgpromote_success: u64,
    /// Promoted pages later demoted, counted once per round trip.
    pub pgpromote_demoted: u64,
    pub pgdemote_kswapd: u64,
    pub pgdemote_direct: u64,
}

impl TieringCounters {
    pub fn demotions(&self) -> u64 {
        self.pgdemote_kswapd + self.pgdemote_direct
    }

    pub fn is_zero(&self) -> bool {
        *self == TieringCounters::default()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "counter,value")?;
        writeln!(w, "pgpromote_success,{}", self.pgpromote_success)?;
        writeln!(w, "pgpromote_demoted,{}", self.pgpromote_demoted)?;
        writeln!(w, "pgdemote_kswapd,{}", self.pgdemote_kswapd)?;
        writeln!(w, "pgdemote_direct,{}", self.pgdemote_direct)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PageState {
    pub tier: Tier,
    pub owner: Option<ObjectId>,
    /// Set while armed.
    pub scan_time: Option<Nanos>,
    pub last_access: Nanos,
    pub resident_since: Nanos,
    /// Promoted and not demoted since.
    promoted: bool,
}

impl PageState {
    pub fn armed(&self) -> bool {
        self.scan_time.is_some()
    }
}

/// State of the hotness threshold at the end of one adjustment window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowPoint {
    pub window_start: Nanos,
    pub candidate_bytes: u64,
    pub promoted_bytes: u64,
    /// Threshold in force during the window.
    pub threshold: Nanos,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimReport {
    pub enabled: bool,
    pub counters: TieringCounters,
    /// Tier that served each sample; `None` for samples the model skips
    /// (cache hits, and stores unless configured).
    pub resolved: Vec<Option<Tier>>,
    pub log: Vec<MigrationEvent>,
    pub windows: Vec<WindowPoint>,
    /// Resident pages at the end: page -> (tier, owner).
    pub final_residency: BTreeMap<u64, (Tier, Option<ObjectId>)>,
    pub samples_by_tier: [u64; 2],
    pub access_cycles: u64,
    pub migration_cycles: u64,
    pub trace_end: Nanos,
    pub peak_dram_bytes: u64,
    pub peak_nvm_bytes: u64,
    pub rate_limit: u64,
    pub page_size: u64,
}

impl SimReport {
    pub fn estimated_cycles(&self) -> u64 {
        self.access_cycles + self.migration_cycles
    }

    pub fn nvm_samples(&self) -> u64 {
        self.samples_by_tier[Tier::Nvm.index()]
    }

    /// Promoted bytes per second of trace time.
    pub fn promoted_bytes_per_sec(&self) -> f64 {
        let secs = self.trace_end as f64 / NANOS_PER_SEC as f64;
        if secs == 0.0 {
            return 0.0;
        }
        (self.counters.pgpromote_success * self.page_size) as f64 / secs
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "metric,value")?;
        writeln!(w, "enabled,{}", self.enabled)?;
        writeln!(
            w,
            "memory_samples,{}",
            self.samples_by_tier[0] + self.samples_by_tier[1]
        )?;
        writeln!(w, "dram_samples,{}", self.samples_by_tier[0])?;
        writeln!(w, "nvm_samples,{}", self.samples_by_tier[1])?;
        writeln!(w, "access_cycles,{}", self.access_cycles)?;
        writeln!(w, "migration_cycles,{}", self.migration_cycles)?;
        writeln!(w, "estimated_cycles,{}", self.estimated_cycles())?;
        writeln!(w, "promotions,{}", self.counters.pgpromote_success)?;
        writeln!(w, "demotions,{}", self.counters.demotions())?;
        writeln!(w, "peak_dram_bytes,{}", self.peak_dram_bytes)?;
        writeln!(w, "peak_nvm_bytes,{}", self.peak_nvm_bytes)?;
        writeln!(w, "trace_end_ns,{}", self.trace_end)?;
        writeln!(w, "promote_rate_limit_bytes_per_s,{}", self.rate_limit)?;
        writeln!(
            w,
            "promoted_bytes_per_s,{:.3}",
            self.promoted_bytes_per_sec()
        )
    }

    pub fn write_windows_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "window_start_ns,threshold_ns,candidate_bytes,promoted_bytes"
        )?;
        for p in &self.windows {
            writeln!(
                w,
                "{},{},{},{}",
                p.window_start, p.threshold, p.candidate_bytes, p.promoted_bytes
            )?;
        }
        Ok(())
    }

    pub fn write_residency_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "page,tier,object_id")?;
        for (p, (t, o)) in &self.final_residency {
            let o = o.map(|o| o.to_string()).unwrap_or_else(|| "NA".into());
            writeln!(w, "{p:#x},{t},{o}")?;
        }
        Ok(())
    }
}

/// Token bucket in nano-bytes (bytes x 1e9) so refills are exact.
struct TokenBucket {
    rate: u128,
    cap: u128,
    level: u128,
    last: Nanos,
}

impl TokenBucket {
    fn refill(&mut self, t: Nanos) {
        if t > self.last {
            self.level = (self.level + self.rate * (t - self.last) as u128).min(self.cap);
            self.last = t;
        }
    }

    fn try_take(&mut self, bytes: u64) -> bool {
        let need = bytes as u128 * NANOS_PER_SEC as u128;
        if self.level >= need {
            self.level -= need;
            true
        } else {
            false
        }
    }
}

struct Sim<'a> {
    cfg: &'a RunConfig,
    enabled: bool,
    page: u64,
    usable: u64,
    high_wm: u64,
    low_wm: u64,
    pages: BTreeMap<u64, PageState>,
    /// DRAM pages by (last_access, page).
    cold: BTreeSet<(Nanos, u64)>,
    dram: u64,
    nvm: u64,
    cursor: Option<u64>,
    threshold: Nanos,
    candidates: u64,
    promoted_in_window: u64,
    tokens: TokenBucket,
    counters: TieringCounters,
    log: Vec<MigrationEvent>,
    windows: Vec<WindowPoint>,
    seq: u64,
    peak_dram: u64,
    peak_nvm: u64,
}

impl Sim<'_> {
    fn emit(&mut self, t: Nanos, page: u64, kind: MigrationKind) {
        self.log.push(MigrationEvent {
            seq: self.seq,
            timestamp: t,
            page,
            kind,
        });
        self.peak_dram = self.peak_dram.max(self.dram);
        self.peak_nvm = self.peak_nvm.max(self.nvm);
    }

    fn commit(&mut self, t: Nanos, page: u64, owner: Option<ObjectId>) -> Result<Tier> {
        let tier = if self.usable - self.dram >= self.page {
            self.dram += self.page;
            self.cold.insert((t, page));
            Tier::Dram
        } else if self.cfg.nvm_capacity - self.nvm >= self.page {
            self.nvm += self.page;
            Tier::Nvm
        } else {
            return Err(Error::CapacityExhausted { page, timestamp: t });
        };
        self.pages.insert(
            page,
            PageState {
                tier,
                owner,
                scan_time: None,
                last_access: t,
                resident_since: t,
                promoted: false,
            },
        );
        self.emit(t, page, MigrationKind::Commit(tier));
        Ok(tier)
    }

    fn promote(&mut self, t: Nanos, page: u64, reason: PromoteReason) {
        let st = self.pages.get_mut(&page).expect("resident");
        debug_assert_eq!(st.tier, Tier::Nvm);
        st.tier = Tier::Dram;
        st.promoted = true;
        st.resident_since = t;
        self.cold.insert((st.last_access, page));
        self.nvm -= self.page;
        self.dram += self.page;
        self.counters.pgpromote_success += 1;
        self.promoted_in_window += self.page;
        self.emit(t, page, MigrationKind::Promote(reason));
    }

    /// Demotes the coldest DRAM page; false when NVM has no room or DRAM is
    /// empty.
    fn demote_coldest(&mut self, t: Nanos, cause: DemoteCause) -> bool {
        if self.cfg.nvm_capacity - self.nvm < self.page {
            return false;
        }
        let Some((_, page)) = self.cold.pop_first() else {
            return false;
        };
        let st = self.pages.get_mut(&page).expect("resident");
        st.tier = Tier::Nvm;
        st.resident_since = t;
        if std::mem::take(&mut st.promoted) {
            self.counters.pgpromote_demoted += 1;
        }
        self.dram -= self.page;
        self.nvm += self.page;
        match cause {
            DemoteCause::Kswapd => self.counters.pgdemote_kswapd += 1,
            DemoteCause::Direct => self.counters.pgdemote_direct += 1,
        }
        self.emit(t, page, MigrationKind::Demote(cause));
        true
    }

    fn scan_tick(&mut self, t: Nanos) {
        let mut armed = 0u64;
        let total = self.pages.len() as u64;
        let mut next = self.cursor;
        while armed < self.cfg.scan_batch.min(total) {
            let key = match next {
                Some(c) => self.pages.range(c + 1..).next().map(|(k, _)| *k),
                None => None,
            }
            .or_else(|| self.pages.keys().next().copied());
            let Some(k) = key else { break };
            self.pages.get_mut(&k).expect("present").scan_time = Some(t);
            next = Some(k);
            armed += 1;
        }
        self.cursor = next;
        if self.dram > self.high_wm {
            while self.dram > self.low_wm && self.demote_coldest(t, DemoteCause::Kswapd) {}
        }
    }

    fn adjust(&mut self, window_start: Nanos) {
        let r = self
            .cfg
            .rate_limit_bytes_per(self.cfg.threshold_adjust_window) as u128;
        let c = self.candidates as u128;
        self.windows.push(WindowPoint {
            window_start,
            candidate_bytes: self.candidates,
            promoted_bytes: self.promoted_in_window,
            threshold: self.threshold,
        });
        if c * 10 > r * 11 {
            self.threshold =
                ((self.threshold as u128 * 4 / 5) as Nanos).max(self.cfg.threshold_min);
        } else if c * 10 < r * 9 {
            self.threshold =
                ((self.threshold as u128 * 5 / 4).min(self.cfg.threshold_max as u128)) as Nanos;
        }
        self.candidates = 0;
        self.promoted_in_window = 0;
    }

    fn munmap(&mut self, t: Nanos, ev: &AllocationEvent) {
        let ps = self.cfg.page_size;
        let (first, last) = (ps.page_of(ev.base), ps.page_of(ev.end() - 1));
        let victims: Vec<u64> = self.pages.range(first..=last).map(|(k, _)| *k).collect();
        for page in victims {
            let st = self.pages.remove(&page).expect("present");
            match st.tier {
                Tier::Dram => {
                    self.cold.remove(&(st.last_access, page));
                    self.dram -= self.page;
                }
                Tier::Nvm => self.nvm -= self.page,
            }
            self.emit(t, page, MigrationKind::Release(st.tier));
        }
    }

    fn access(&mut self, s: &MemorySample, owner: Option<ObjectId>) -> Result<Tier> {
        let t = s.timestamp;
        let page = self.cfg.page_size.page_of(s.addr);
        let Some(st) = self.pages.get(&page).copied() else {
            return self.commit(t, page, owner);
        };
        if self.enabled {
            if let Some(scan_time) = st.scan_time {
                self.pages.get_mut(&page).expect("present").scan_time = None;
                if st.tier == Tier::Nvm {
                    self.hint_fault(t, page, t - scan_time);
                }
            }
        }
        let st = self.pages.get_mut(&page).expect("present");
        if st.tier == Tier::Dram {
            self.cold.remove(&(st.last_access, page));
            self.cold.insert((t, page));
        }
        st.last_access = t;
        Ok(st.tier)
    }

    fn hint_fault(&mut self, t: Nanos, page: u64, latency: Nanos) {
        if self.dram + self.page <= self.high_wm {
            self.promote(t, page, PromoteReason::FreeDram);
            return;
        }
        if latency >= self.threshold {
            return;
        }
        self.candidates += self.page;
        self.tokens.refill(t);
        if self.tokens.level < self.page as u128 * NANOS_PER_SEC as u128 {
            return;
        }
        if self.usable - self.dram < self.page && !self.demote_coldest(t, DemoteCause::Direct) {
            return;
        }
        let paid = self.tokens.try_take(self.page);
        debug_assert!(paid);
        self.promote(t, page, PromoteReason::Threshold);
    }
}

/// Runs the model. `attributions[i]` is the owning object of `samples[i]`
/// (recorded on the page); both streams must be time-sorted. With
/// `enabled = false` there is no scanning, promotion, demotion or threshold
/// adaptation: pages stay where first touch put them.
pub fn simulate(
    allocs: &[AllocationEvent],
    samples: &[MemorySample],
    attributions: &[Option<ObjectId>],
    cfg: &RunConfig,
    enabled: bool,
) -> Result<SimReport> {
    cfg.validate()?;
    assert_eq!(
        samples.len(),
        attributions.len(),
        "one attribution per sample"
    );
    check_sorted("allocation events", allocs.iter().map(|e| e.timestamp))?;
    check_sorted("samples", samples.iter().map(|s| s.timestamp))?;

    let usable = cfg.usable_dram();
    let page = cfg.page_size.bytes();
    let mut sim = Sim {
        cfg,
        enabled,
        page,
        usable,
        high_wm: (usable as f64 * cfg.watermark_high) as u64,
        low_wm: (usable as f64 * cfg.watermark_low) as u64,
        pages: BTreeMap::new(),
        cold: BTreeSet::new(),
        dram: 0,
        nvm: 0,
        cursor: None,
        threshold: cfg.threshold_init,
        candidates: 0,
        promoted_in_window: 0,
        tokens: TokenBucket {
            rate: cfg.promote_rate_limit as u128,
            cap: page as u128 * NANOS_PER_SEC as u128,
            level: page as u128 * NANOS_PER_SEC as u128,
            last: 0,
        },
        counters: TieringCounters::default(),
        log: Vec::new(),
        windows: Vec::new(),
        seq: 0,
        peak_dram: 0,
        peak_nvm: 0,
    };

    let mut resolved = vec![None; samples.len()];
    let mut samples_by_tier = [0u64; 2];
    let mut access_cycles = 0u64;
    let mut next_scan = cfg.scan_period;
    let mut next_adjust = cfg.threshold_adjust_window;
    let (mut ai, mut si) = (0usize, 0usize);

    loop {
        let ta = allocs.get(ai).map(|e| e.timestamp);
        let ts = samples.get(si).map(|s| s.timestamp);
        let t = match (ta, ts) {
            (None, None) => break,
            (Some(a), Some(s)) => a.min(s),
            (Some(a), None) => a,
            (None, Some(s)) => s,
        };
        sim.seq = si as u64;
        if enabled {
            // ticks due at or before the next event run first, in time order
            while next_scan <= t || next_adjust <= t {
                if next_adjust <= next_scan {
                    sim.adjust(next_adjust - cfg.threshold_adjust_window);
                    next_adjust += cfg.threshold_adjust_window;
                } else {
                    sim.scan_tick(next_scan);
                    next_scan += cfg.scan_period;
                }
            }
        }
        if ta == Some(t) {
            let ev = &allocs[ai];
            if ev.kind == AllocKind::Munmap && ev.length > 0 {
                sim.munmap(t, ev);
            }
            ai += 1;
            continue;
        }
        let s = &samples[si];
        if s.counts_memory_access(cfg.include_stores) {
            let tier = sim.access(s, attributions[si])?;
            resolved[si] = Some(tier);
            samples_by_tier[tier.index()] += 1;
            access_cycles += cfg.cost_model.cycles(tier, s.tlb);
        }
        si += 1;
    }

    let trace_end = crate::mapping::trace_end(allocs, samples);
    let counters = sim.counters;
    let migrations = counters.pgpromote_success + counters.demotions();
    Ok(SimReport {
        enabled,
        counters,
        resolved,
        final_residency: sim
            .pages
            .iter()
            .map(|(k, v)| (*k, (v.tier, v.owner)))
            .collect(),
        log: sim.log,
        windows: sim.windows,
        samples_by_tier,
        access_cycles,
        migration_cycles: cfg.cost_model.migrate_page_cost * migrations,
        trace_end,
        peak_dram_bytes: sim.peak_dram,
        peak_nvm_bytes: sim.peak_nvm,
        rate_limit: cfg.promote_rate_limit,
        page_size: page,
    })
}

/// Replays the log against the report and configuration and checks the
/// model's invariants: capacities, migration direction, counter agreement,
/// threshold bounds and the rate-limit ceiling (threshold promotions in any
/// one-second span stay within the rate plus one page). Returns the first
/// violation found.
pub fn audit(report: &SimReport, cfg: &RunConfig) -> std::result::Result<(), String> {
    use std::collections::HashMap;
    let page = cfg.page_size.bytes();
    let usable = cfg.usable_dram();
    let mut tier_of: HashMap<u64, Tier> = HashMap::new();
    let (mut dram, mut nvm) = (0u64, 0u64);
    let mut c = TieringCounters::default();
    let mut promoted: HashMap<u64, bool> = HashMap::new();
    let mut last_t = 0;
    for (i, e) in report.log.iter().enumerate() {
        if e.timestamp < last_t {
            return Err(format!("log entry {i} goes back in time"));
        }
        last_t = e.timestamp;
        let cur = tier_of.get(&e.page).copied();
        match e.kind {
            MigrationKind::Commit(t) => {
                if cur.is_some() {
                    return Err(format!("log entry {i}: page {:#x} committed twice", e.page));
                }
                tier_of.insert(e.page, t);
                promoted.insert(e.page, false);
                match t {
                    Tier::Dram => dram += page,
                    Tier::Nvm => nvm += page,
                }
            }
            MigrationKind::Promote(_) => {
                if cur != Some(Tier::Nvm) {
                    return Err(format!("log entry {i}: promotion of a page not on NVM"));
                }
                tier_of.insert(e.page, Tier::Dram);
                promoted.insert(e.page, true);
                dram += page;
                nvm -= page;
                c.pgpromote_success += 1;
            }
            MigrationKind::Demote(cause) => {
                if cur != Some(Tier::Dram) {
                    return Err(format!("log entry {i}: demotion of a page not on DRAM"));
                }
                tier_of.insert(e.page, Tier::Nvm);
                if promoted.insert(e.page, false) == Some(true) {
                    c.pgpromote_demoted += 1;
                }
                dram -= page;
                nvm += page;
                match cause {
                    DemoteCause::Kswapd => c.pgdemote_kswapd += 1,
                    DemoteCause::Direct => c.pgdemote_direct += 1,
                }
            }
            MigrationKind::Release(t) => {
                if cur != Some(t) {
                    return Err(format!("log entry {i}: release from the wrong tier"));
                }
                tier_of.remove(&e.page);
                match t {
                    Tier::Dram => dram -= page,
                    Tier::Nvm => nvm -= page,
                }
            }
        }
        if dram > usable || nvm > cfg.nvm_capacity {
            return Err(format!(
                "log entry {i}: residency {dram}/{nvm} exceeds capacity"
            ));
        }
        if c.pgpromote_demoted > c.pgpromote_success {
            return Err(format!(
                "log entry {i}: pgpromote_demoted exceeds pgpromote_success"
            ));
        }
    }
    if c != report.counters {
        return Err(format!(
            "counters {:?} disagree with the log {:?}",
            report.counters, c
        ));
    }
    if !report.enabled && !report.counters.is_zero() {
        return Err("disabled run moved pages".into());
    }
    for w in &report.windows {
        if w.threshold < cfg.threshold_min || w.threshold > cfg.threshold_max {
            return Err(format!("threshold {} out of bounds", w.threshold));
        }
    }
    let paid: Vec<Nanos> = report
        .log
        .iter()
        .filter(|e| e.kind == MigrationKind::Promote(PromoteReason::Threshold))
        .map(|e| e.timestamp)
        .collect();
    let ceiling = cfg.promote_rate_limit as u128 + page as u128;
    let mut hi = 0;
    for lo in 0..paid.len() {
        while hi < paid.len() && paid[hi] <= paid[lo] + NANOS_PER_SEC {
            hi += 1;
        }
        let bytes = (hi - lo) as u128 * page as u128;
        if bytes > ceiling {
            return Err(format!(
                "{bytes} bytes promoted within 1 s of t={}",
                paid[lo]
            ));
        }
    }
    Ok(())
}

fn check_sorted(stream: &'static str, ts: impl Iterator<Item = Nanos>) -> Result<()> {
    let mut prev = 0;
    for (index, t) in ts.enumerate() {
        if t < prev {
            return Err(Error::Unsorted {
                stream,
                index,
                timestamp: t,
                previous: prev,
            });
        }
        prev = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
