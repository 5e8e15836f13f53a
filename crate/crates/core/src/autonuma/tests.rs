use proptest::prelude::*;

use super::*;
use crate::trace::{Level, Op, PageSize, TlbOutcome};

const SEC: u64 = NANOS_PER_SEC;
const P: u64 = 4096;

fn load(t: u64, addr: u64) -> MemorySample {
    MemorySample {
        timestamp: t,
        thread_id: 0,
        addr,
        op: Op::Load,
        level: Level::Unknown,
        latency: 0,
        tlb: TlbOutcome::Hit,
    }
}

fn mmap(t: u64, base: u64, len: u64) -> AllocationEvent {
    AllocationEvent {
        timestamp: t,
        kind: AllocKind::Mmap,
        base,
        length: len,
        callstack_id: 0,
    }
}

fn munmap(t: u64, base: u64, len: u64) -> AllocationEvent {
    AllocationEvent {
        timestamp: t,
        kind: AllocKind::Munmap,
        base,
        length: len,
        callstack_id: 0,
    }
}

/// Usable DRAM of `dram_pages` pages; one-page scan batches every second.
fn small_cfg(dram_pages: u64, nvm_pages: u64) -> RunConfig {
    RunConfig {
        dram_capacity: (dram_pages + 1) * P,
        reserved_dram: P,
        nvm_capacity: nvm_pages * P,
        scan_period: SEC,
        scan_batch: 1,
        watermark_high: 1.0,
        watermark_low: 1.0,
        ..RunConfig::default()
    }
}

fn run(
    allocs: &[AllocationEvent],
    samples: &[MemorySample],
    cfg: &RunConfig,
    enabled: bool,
) -> SimReport {
    let attr = vec![None; samples.len()];
    let r = simulate(allocs, samples, &attr, cfg, enabled).unwrap();
    audit(&r, cfg).unwrap();
    r
}

#[test]
fn working_set_fits_in_dram() {
    let cfg = small_cfg(16, 16);
    let samples: Vec<_> = (0..200)
        .map(|i| load(i * 50_000_000, (i % 8) * P))
        .collect();
    let r = run(&[mmap(0, 0, 8 * P)], &samples, &cfg, true);
    assert_eq!(r.counters.demotions(), 0);
    assert_eq!(r.nvm_samples(), 0);
    assert!(r
        .log
        .iter()
        .all(|e| e.kind == MigrationKind::Commit(Tier::Dram)));
}

#[test]
fn first_touch_spills_to_nvm() {
    let cfg = small_cfg(2, 4);
    let samples: Vec<_> = (0..4).map(|i| load(i, i * P)).collect();
    let r = run(&[], &samples, &cfg, false);
    assert_eq!(
        r.resolved,
        vec![
            Some(Tier::Dram),
            Some(Tier::Dram),
            Some(Tier::Nvm),
            Some(Tier::Nvm)
        ]
    );
    let full: Vec<_> = (0..7).map(|i| load(i, i * P)).collect();
    let err = simulate(&[], &full, &[None; 7], &cfg, false).unwrap_err();
    assert!(matches!(err, Error::CapacityExhausted { page: 6, .. }));
}

#[test]
fn disabled_never_migrates() {
    let cfg = small_cfg(1, 8);
    let samples: Vec<_> = (0..100).map(|i| load(i * SEC / 3, (i % 4) * P)).collect();
    let r = run(&[], &samples, &cfg, false);
    assert!(r.counters.is_zero());
    assert!(r.windows.is_empty());
    assert_eq!(r.migration_cycles, 0);
}

#[test]
fn hint_fault_promotes_into_free_dram() {
    // page 0 lands on NVM while page 1 holds the only DRAM page; after page 1
    // is unmapped the next hint fault on page 0 promotes it
    let cfg = small_cfg(1, 4);
    let allocs = [munmap(SEC / 2, P, P)];
    let samples = [
        load(0, P),
        load(1, 0),
        load(SEC + 10, 0),
        load(2 * SEC + 10, 0),
    ];
    let r = run(&allocs, &samples, &cfg, true);
    // the tick at 1 s arms page 0 (the only resident page)
    assert_eq!(r.counters.pgpromote_success, 1);
    assert_eq!(r.resolved[2], Some(Tier::Dram));
    assert_eq!(
        r.log.iter().map(|e| e.kind).collect::<Vec<_>>(),
        vec![
            MigrationKind::Commit(Tier::Dram),
            MigrationKind::Commit(Tier::Nvm),
            MigrationKind::Release(Tier::Dram),
            MigrationKind::Promote(PromoteReason::FreeDram),
        ]
    );
    assert_eq!(
        r.estimated_cycles(),
        r.access_cycles + CostModel::DEFAULT_MIGRATE_PAGE_COST
    );
}

use crate::config::CostModel;

#[test]
fn threshold_promotion_demotes_directly() {
    let mut cfg = small_cfg(1, 4);
    cfg.scan_batch = 2;
    cfg.threshold_init = 2 * SEC;
    cfg.threshold_max = 4 * SEC;
    // page 0 in DRAM, page 1 on NVM; both armed at 1 s; page 1 faults 0.1 s later
    let samples = [load(0, 0), load(1, P), load(SEC + SEC / 10, P)];
    let r = run(&[], &samples, &cfg, true);
    assert_eq!(r.counters.pgpromote_success, 1);
    assert_eq!(r.counters.pgdemote_direct, 1);
    assert_eq!(r.final_residency[&1].0, Tier::Dram);
    assert_eq!(r.final_residency[&0].0, Tier::Nvm);
}

#[test]
fn slow_fault_is_not_a_candidate() {
    let mut cfg = small_cfg(1, 4);
    cfg.scan_batch = 2;
    cfg.threshold_init = SEC / 2;
    let samples = [load(0, 0), load(1, P), load(SEC + SEC * 3 / 4, P)];
    let r = run(&[], &samples, &cfg, true);
    assert_eq!(r.counters.pgpromote_success, 0);
}

#[test]
fn promote_then_demote_round_trip() {
    let mut cfg = small_cfg(1, 4);
    cfg.scan_batch = 2;
    let samples = [
        load(0, 0),
        load(1, P),
        load(SEC + 10, P),
        // armed again at 2 s; page 0 is now on NVM and faults fast
        load(2 * SEC + 10, 0),
    ];
    let r = run(&[], &samples, &cfg, true);
    assert_eq!(r.counters.pgpromote_success, 2);
    assert_eq!(r.counters.pgpromote_demoted, 1);
    assert_eq!(r.counters.pgdemote_direct, 2);
}

#[test]
fn kswapd_demotes_coldest_to_low_watermark() {
    let mut cfg = small_cfg(10, 20);
    cfg.watermark_high = 0.7;
    cfg.watermark_low = 0.5;
    let samples: Vec<_> = (0..10).map(|i| load(i, i * P)).collect();
    let r = run(&[], &samples, &cfg, true);
    // no tick has happened yet: the last sample is before 1 s
    assert_eq!(r.counters.pgdemote_kswapd, 0);
    let mut samples = samples;
    samples.push(load(SEC, 0));
    let r = run(&[], &samples, &cfg, true);
    assert_eq!(r.counters.pgdemote_kswapd, 5);
    let demoted: Vec<u64> = r
        .log
        .iter()
        .filter(|e| matches!(e.kind, MigrationKind::Demote(_)))
        .map(|e| e.page)
        .collect();
    assert_eq!(demoted, vec![0, 1, 2, 3, 4]);
}

#[test]
fn threshold_adapts_within_bounds() {
    let mut cfg = small_cfg(1, 64);
    cfg.scan_batch = 64;
    cfg.promote_rate_limit = P;
    cfg.threshold_init = SEC;
    cfg.threshold_min = SEC / 4;
    cfg.threshold_max = 2 * SEC;
    let mut samples = vec![load(0, 0)];
    for i in 0..32 {
        samples.push(load(1 + i, (i + 1) * P));
    }
    for k in 1..16u64 {
        for i in 0..32 {
            samples.push(load(k * SEC + 1000 + i, (i + 1) * P));
        }
    }
    let r = run(&[], &samples, &cfg, true);
    let th: Vec<u64> = r.windows.iter().map(|w| w.threshold).collect();
    assert_eq!(th[0], SEC);
    assert!(th.contains(&(SEC / 4)), "{th:?}");
    assert!(r.counters.pgpromote_success <= 17);
}

#[test]
fn munmap_releases_pages() {
    let cfg = small_cfg(4, 4);
    let allocs = [mmap(0, 0, 4 * P), munmap(10, 0, 2 * P)];
    let samples = [load(1, 0), load(2, P), load(3, 2 * P), load(20, 0)];
    let r = run(&allocs, &samples, &cfg, false);
    assert_eq!(
        r.log
            .iter()
            .filter(|e| matches!(e.kind, MigrationKind::Release(_)))
            .count(),
        2
    );
    assert_eq!(
        r.final_residency.keys().copied().collect::<Vec<_>>(),
        vec![0, 2]
    );
}

#[test]
fn unsorted_stream_rejected() {
    let cfg = small_cfg(4, 4);
    let samples = [load(5, 0), load(4, 0)];
    assert!(matches!(
        simulate(&[], &samples, &[None, None], &cfg, true),
        Err(Error::Unsorted { .. })
    ));
}

#[test]
fn replay_example() {
    let log = [
        MigrationEvent {
            seq: 0,
            timestamp: 0,
            page: 3,
            kind: MigrationKind::Commit(Tier::Nvm),
        },
        MigrationEvent {
            seq: 1,
            timestamp: 50,
            page: 3,
            kind: MigrationKind::Promote(PromoteReason::FreeDram),
        },
    ];
    let samples = [load(40, 3 * P), load(60, 3 * P)];
    assert_eq!(
        replay_residency(&log, &samples, PageSize::DEFAULT, false),
        vec![Some(Tier::Nvm), Some(Tier::Dram)]
    );
    let relabeled = relabel_samples(&samples, &[Some(Tier::Nvm), Some(Tier::Dram)]);
    assert_eq!(relabeled[1].level, Level::Dram);
}

#[test]
fn log_csv_round_trip() {
    let mut cfg = small_cfg(1, 4);
    cfg.scan_batch = 2;
    let samples = [
        load(0, 0),
        load(1, P),
        load(SEC + 10, P),
        load(2 * SEC + 10, 0),
    ];
    let r = run(&[munmap(3 * SEC, 0, P)], &samples, &cfg, true);
    let mut buf = Vec::new();
    write_migration_log(&mut buf, &r.log).unwrap();
    let back = read_migration_log(&buf[..], "log").unwrap();
    assert_eq!(back, r.log);
}

fn arb_trace() -> impl Strategy<Value = (Vec<AllocationEvent>, Vec<MemorySample>, RunConfig)> {
    (
        prop::collection::vec(
            (0u64..20 * SEC, 0u64..48, prop::bool::weighted(0.1)),
            1..400,
        ),
        1u64..12,
        1u64..8,
        1u64..6,
        (1u64..4, 0u64..3),
        prop::sample::select(vec![P, 4 * P, 64 * P]),
    )
        .prop_map(
            |(raw, dram_pages, batch, period_tenths, (hi, lo_gap), rate)| {
                let mut raw = raw;
                raw.sort_by_key(|r| r.0);
                let mut allocs = Vec::new();
                let mut samples = Vec::new();
                for (t, page, unmap) in raw {
                    if unmap {
                        allocs.push(munmap(t, page * P, 2 * P));
                    } else {
                        samples.push(load(t, page * P + 8));
                    }
                }
                let wh = 1.0 - hi as f64 * 0.05;
                let cfg = RunConfig {
                    dram_capacity: (dram_pages + 2) * P,
                    reserved_dram: 2 * P,
                    nvm_capacity: 64 * P,
                    scan_period: period_tenths * SEC / 10,
                    scan_batch: batch,
                    promote_rate_limit: rate,
                    threshold_init: SEC,
                    threshold_min: SEC / 10,
                    threshold_max: 3 * SEC,
                    threshold_adjust_window: SEC,
                    watermark_high: wh,
                    watermark_low: wh - lo_gap as f64 * 0.1,
                    ..RunConfig::default()
                };
                (allocs, samples, cfg)
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn invariants_hold((allocs, samples, cfg) in arb_trace()) {
        let attr = vec![None; samples.len()];
        for enabled in [true, false] {
            let r = simulate(&allocs, &samples, &attr, &cfg, enabled).unwrap();
            prop_assert_eq!(audit(&r, &cfg), Ok(()));
            prop_assert_eq!(replay_residency(&r.log, &samples, cfg.page_size, false), r.resolved.clone());
            let again = simulate(&allocs, &samples, &attr, &cfg, enabled).unwrap();
            prop_assert_eq!(&r, &again);
            if !enabled {
                prop_assert!(r.counters.is_zero());
            }
        }
    }
}
