//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tierlab_core::autonuma::{simulate, DemoteCause, MigrationKind, PromoteReason};
use tierlab_core::characterize::{reuse_stats, tier_split, ReuseFilter};
use tierlab_core::mapping::{build_object_table, profile_objects, trace_end};
use tierlab_core::placement::{assign_greedy, evaluate_plan, rank_objects, DensityBasis};
use tierlab_core::report::CsvTable;
use tierlab_core::synth::{self, generate, ObjectSpec, Pattern, WorkloadSpec};
use tierlab_core::{
    AllocKind, AllocationEvent, CostModel, Level, MemorySample, Op, PageSize, RunConfig, Tier,
    TlbOutcome,
};

const PAGE: u64 = 4096;
const SEC: u64 = 1_000_000_000;

type Outcome = Result<String, String>;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tierlab")
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/table_fixture")
}

/// Runs the binary, failing the criterion on a non-zero exit.
fn run(args: &[&str]) -> Result<Duration, String> {
    let t0 = Instant::now();
    let out = Command::new(bin())
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "tierlab {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(t0.elapsed())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn metric(path: &Path, key: &str) -> Result<f64, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let t = CsvTable::parse(&text).map_err(|e| e.to_string())?;
    let (kc, vc) = (&t.header[0], &t.header[1]);
    t.lookup(kc, key, vc)
        .ok_or_else(|| format!("{key} missing from {}", path.display()))?
        .parse()
        .map_err(|e| format!("{key}: {e}"))
}

fn trace_args(dir: &Path) -> Vec<String> {
    vec![
        "--samples".into(),
        dir.join("samples.csv").display().to_string(),
        "--allocs".into(),
        dir.join("allocs.csv").display().to_string(),
        "--config".into(),
        dir.join("config.json").display().to_string(),
    ]
}

fn run_with(cmd: &str, trace: &Path, extra: &[&str]) -> Result<Duration, String> {
    let mut args: Vec<String> = vec![cmd.into()];
    args.extend(trace_args(trace));
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run(&refs)
}

fn within(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{name} = {got}, expected {want} +/- {tol}"))
    }
}

// 1 -------------------------------------------------------------------------

fn c1_tier_split(work: &Path) -> Outcome {
    let out = work.join("c1");
    let elapsed = run_with("characterize", &fixture(), &["--out-dir", p(&out)])?;
    let f = out.join("tier_split.csv");
    // Percentage points: 0.01 pp is 1e-4 as a fraction.
    let tol = 1e-4;
    within("external_fraction", metric(&f, "external_fraction")?, 0.491, tol)?;
    within("dram_share", metric(&f, "dram_share")?, 0.6769, tol)?;
    within("nvm_share", metric(&f, "nvm_share")?, 0.3231, tol)?;
    within("dram_cost_share", metric(&f, "dram_cost_share")?, 0.3753, tol)?;
    within("nvm_cost_share", metric(&f, "nvm_cost_share")?, 0.6247, tol)?;
    if elapsed >= Duration::from_secs(5) {
        return Err(format!("characterize took {elapsed:?}"));
    }
    Ok(format!(
        "external 49.10%, DRAM/NVM 67.69/32.31%, cost 37.53/62.47% in {:.2}s",
        elapsed.as_secs_f64()
    ))
}

// 2 -------------------------------------------------------------------------

fn c2_tlb_costs(work: &Path) -> Outcome {
    let f = work.join("c1/tier_split.csv");
    let want = CostModel::preset("bc_kron").unwrap();
    for (key, w) in [
        ("mean_cost_dram_tlb_hit", want.dram_tlb_hit),
        ("mean_cost_dram_tlb_miss", want.dram_tlb_miss),
        ("mean_cost_nvm_tlb_hit", want.nvm_tlb_hit),
        ("mean_cost_nvm_tlb_miss", want.nvm_tlb_miss),
    ] {
        let got = metric(&f, key)?;
        within(key, got, w as f64, 0.01 * w as f64)?;
    }
    let cc = synth::preset("cc_urand_like", 7).map_err(|e| e.to_string())?;
    let split = tier_split::<f64>(&cc.trace.samples, false);
    let dram_hit = split.mean_cost[0][0].ok_or("no DRAM TLB-hit samples")?;
    let nvm_miss = split.mean_cost[1][1].ok_or("no NVM TLB-miss samples")?;
    let ratio = nvm_miss / dram_hit;
    let table = CostModel::preset("cc_urand").unwrap();
    let expected = table.nvm_tlb_miss as f64 / table.dram_tlb_hit as f64;
    within("cc_urand ratio", ratio, expected, 0.01 * expected)?;
    if ratio.floor() != 12.0 {
        return Err(format!("cc_urand NVM-miss / DRAM-hit ratio {ratio:.3} is not about 12x"));
    }
    Ok(format!(
        "fixture means exact to the table; cc_urand NVM-miss/DRAM-hit = {ratio:.2}x"
    ))
}

// 3 -------------------------------------------------------------------------

fn c3_touch_histogram(work: &Path) -> Outcome {
    let syn = work.join("bfs/synth");
    run(&["synth", "--preset", "bfs_kron_like", "--seed", "11", "--out-dir", p(&syn)])?;
    let out = work.join("bfs/char");
    let elapsed = run_with("characterize", &syn, &["--out-dir", p(&out)])?;
    let text = fs::read_to_string(out.join("touch_histogram.csv")).map_err(|e| e.to_string())?;
    let t = CsvTable::parse(&text).map_err(|e| e.to_string())?;
    let idx = t.require(&["scope", "touches", "access_share", "accesses"]).map_err(|e| e.to_string())?;
    let row = t
        .rows
        .iter()
        .find(|r| r[idx[0]] == "all" && r[idx[1]] == "1")
        .ok_or("no all/1 row")?;
    let share: f64 = row[idx[2]].parse().map_err(|e| format!("{e}"))?;
    let total: u64 = t
        .rows
        .iter()
        .filter(|r| r[idx[0]] == "all")
        .map(|r| r[idx[3]].parse::<u64>().unwrap())
        .sum();
    within("1-touch share", share, 0.80, 0.02)?;
    let samples = fs::read_to_string(syn.join("samples.csv")).map_err(|e| e.to_string())?.lines().count() - 1;
    if samples != 1_000_000 {
        return Err(format!("bfs preset has {samples} samples"));
    }
    if elapsed >= Duration::from_secs(10) {
        return Err(format!("characterize on 1e6 samples took {elapsed:?}"));
    }

    let sweep = WorkloadSpec {
        name: "sweep".into(),
        seed: 3,
        duration: 10 * SEC,
        sample_rate: 5_000.0,
        threads: 7,
        external_fraction: 1.0,
        tlb_miss_fraction: 0.2,
        levels: synth::LevelMode::Traced,
        latency_model: "bfs_kron".into(),
        latency_jitter: 0.0,
        objects: vec![ObjectSpec {
            size: 60_000 * PAGE,
            pattern: Pattern::SingleTouchSweep,
            weight: 1.0,
            start: 0,
            end: None,
            free_at: None,
            nvm_fraction: 0.3,
            callstack_id: 0,
        }],
    };
    let tr = generate(&sweep).map_err(|e| e.to_string())?;
    let h = tierlab_core::characterize::touch_histogram::<f64>(&tr.samples, PageSize::DEFAULT, None, false);
    if h.access_shares[0] != 1.0 || h.pages[1] + h.pages[2] != 0 {
        return Err(format!("sweep histogram {:?}", h.access_shares));
    }
    Ok(format!(
        "bfs_kron_like 1-touch share {:.2}% of {total} external accesses, characterize {:.2}s; sweep 100%",
        share * 100.0,
        elapsed.as_secs_f64()
    ))
}

// 4 -------------------------------------------------------------------------

fn nearest_rank_oracle(sorted: &[f64], pct: usize) -> f64 {
    let n = sorted.len();
    let rank = (pct * n).div_ceil(100).max(1);
    sorted[rank - 1]
}

fn c4_reuse_percentiles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0usize;
    for case in 0..1_000 {
        let pages = rng.random_range(1..300u64);
        let mut events: Vec<(u64, u64)> = Vec::new();
        for pg in 0..pages {
            let touches = match rng.random_range(0..10) {
                0..=1 => 1,
                2..=7 => 2,
                _ => rng.random_range(3..6),
            };
            for _ in 0..touches {
                events.push((rng.random_range(0..60 * SEC), pg));
            }
        }
        events.sort();
        let samples: Vec<MemorySample> = events
            .iter()
            .map(|&(t, pg)| MemorySample {
                timestamp: t,
                thread_id: 0,
                addr: 0x1000_0000 + pg * PAGE + 8,
                op: Op::Load,
                level: Level::Dram,
                latency: 500,
                tlb: TlbOutcome::Hit,
            })
            .collect();

        let mut times: HashMap<u64, Vec<u64>> = HashMap::new();
        for &(t, pg) in &events {
            times.entry(pg).or_default().push(t);
        }
        let mut gaps: Vec<f64> = times
            .values()
            .filter(|v| v.len() == 2)
            .map(|v| (v[1] - v[0]) as f64 / SEC as f64)
            .collect();
        gaps.sort_by(f64::total_cmp);

        let filter = ReuseFilter {
            tier: Tier::Dram,
            object: None,
            include_stores: false,
        };
        let got = reuse_stats::<f64>(&samples, PageSize::DEFAULT, filter);
        match got {
            None if gaps.is_empty() => continue,
            None => return Err(format!("case {case}: no stats for {} gaps", gaps.len())),
            Some(s) => {
                let want = [
                    ("count", gaps.len() as f64, s.count as f64),
                    ("min", gaps[0], s.min),
                    ("p25", nearest_rank_oracle(&gaps, 25), s.p25),
                    ("p50", nearest_rank_oracle(&gaps, 50), s.p50),
                    ("p75", nearest_rank_oracle(&gaps, 75), s.p75),
                    ("max", gaps[gaps.len() - 1], s.max),
                ];
                for (name, w, g) in want {
                    if w != g {
                        return Err(format!("case {case}: {name} {g} != oracle {w}"));
                    }
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} populations, percentiles identical to the sort oracle"))
}

// 5 -------------------------------------------------------------------------

/// `(base, end, alive_start, alive_end)` intervals from a direct replay of
/// the allocation stream.
fn replay_intervals(events: &[AllocationEvent]) -> Vec<(u64, u64, u64, u64)> {
    let mut live: Vec<(u64, u64, u64)> = Vec::new();
    let mut done = Vec::new();
    for ev in events {
        let (b, e, t) = (ev.base, ev.base + ev.length, ev.timestamp);
        match ev.kind {
            AllocKind::Mmap => live.push((b, e, t)),
            AllocKind::Munmap => {
                let mut next = Vec::new();
                for (lb, le, ls) in live.drain(..) {
                    if lb < e && b < le {
                        done.push((lb, le, ls, t));
                        if lb < b {
                            next.push((lb, b, t));
                        }
                        if e < le {
                            next.push((e, le, t));
                        }
                    } else {
                        next.push((lb, le, ls));
                    }
                }
                live = next;
            }
        }
    }
    done.extend(live.into_iter().map(|(b, e, s)| (b, e, s, u64::MAX)));
    done
}

fn c5_mapping_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let slots = 300u64;
    let slot_pages = 64u64;
    let base0 = 0x5000_0000_0000u64;
    let mut events = Vec::new();
    let mut live: Vec<(u64, u64)> = Vec::new();
    let mut t = 0u64;
    let mut mmaps = 0;
    let mut partial = 0;
    while mmaps < 1_000 {
        t += rng.random_range(1..1_000_000);
        if live.is_empty() || rng.random_bool(0.55) {
            let s = rng.random_range(0..slots);
            let b = base0 + s * slot_pages * PAGE;
            let len = rng.random_range(1..=slot_pages) * PAGE;
            if live.iter().any(|&(lb, le)| lb < b + len && b < le) {
                continue;
            }
            events.push(AllocationEvent {
                timestamp: t,
                kind: AllocKind::Mmap,
                base: b,
                length: len,
                callstack_id: s,
            });
            live.push((b, b + len));
            mmaps += 1;
        } else {
            let i = rng.random_range(0..live.len());
            let (lb, le) = live[i];
            let pages = (le - lb) / PAGE;
            let (ub, ue) = if pages > 2 && rng.random_bool(0.4) {
                partial += 1;
                let a = rng.random_range(0..pages - 1);
                let z = rng.random_range(a + 1..pages);
                (lb + a * PAGE, lb + z * PAGE)
            } else {
                (lb, le)
            };
            events.push(AllocationEvent {
                timestamp: t,
                kind: AllocKind::Munmap,
                base: ub,
                length: ue - ub,
                callstack_id: 0,
            });
            live.remove(i);
            if lb < ub {
                live.push((lb, ub));
            }
            if ue < le {
                live.push((ue, le));
            }
        }
    }
    let span = t + 1_000_000;
    let mut samples: Vec<MemorySample> = (0..100_000)
        .map(|_| {
            let s = rng.random_range(0..slots + 5);
            MemorySample {
                timestamp: rng.random_range(0..span),
                thread_id: 0,
                addr: base0 + s * slot_pages * PAGE + rng.random_range(0..slot_pages * PAGE),
                op: Op::Load,
                level: Level::Nvm,
                latency: 1_000,
                tlb: TlbOutcome::Hit,
            }
        })
        .collect();
    samples.sort_by_key(|s| s.timestamp);

    let t0 = Instant::now();
    let table = build_object_table(&events, trace_end(&events, &samples)).map_err(|e| e.to_string())?;
    let attr = table.attribute_all(&samples);
    let elapsed = t0.elapsed();

    let intervals = replay_intervals(&events);
    let mut hits = 0;
    for (i, s) in samples.iter().enumerate() {
        let found: Vec<&(u64, u64, u64, u64)> = intervals
            .iter()
            .filter(|&&(b, e, a, z)| b <= s.addr && s.addr < e && a <= s.timestamp && s.timestamp < z)
            .collect();
        if found.len() > 1 {
            return Err(format!("oracle found {} live objects for sample {i}", found.len()));
        }
        let want = found.first().map(|&&(b, e, a, _)| (b, e, a));
        let got = attr[i].map(|id| {
            let r = table.get(id).expect("record");
            (r.base, r.end(), r.alive_start)
        });
        if want != got {
            return Err(format!("sample {i}: attribute {got:?} != oracle {want:?}"));
        }
        hits += want.is_some() as usize;
    }
    if elapsed >= Duration::from_secs(10) {
        return Err(format!("build + attribute took {elapsed:?}"));
    }
    Ok(format!(
        "1e5 samples over 1000 mmaps ({partial} partial unmaps), {hits} mapped, identical; {:.3}s",
        elapsed.as_secs_f64()
    ))
}

// 6 -------------------------------------------------------------------------

struct SimCase {
    allocs: Vec<AllocationEvent>,
    samples: Vec<MemorySample>,
    cfg: RunConfig,
}

fn random_sim_case(rng: &mut ChaCha8Rng) -> SimCase {
    let dram_pages = rng.random_range(8..48u64);
    let nobj = rng.random_range(1..6);
    let mut allocs = Vec::new();
    let mut objs = Vec::new();
    let mut base = 0x7000_0000_0000u64;
    let mut total_pages = 0;
    for k in 0..nobj {
        let pages = rng.random_range(1..40u64);
        let start = rng.random_range(0..3 * SEC);
        let free = rng.random_bool(0.3).then(|| start + rng.random_range(SEC..6 * SEC));
        allocs.push(AllocationEvent {
            timestamp: start,
            kind: AllocKind::Mmap,
            base,
            length: pages * PAGE,
            callstack_id: k,
        });
        if let Some(f) = free {
            allocs.push(AllocationEvent {
                timestamp: f,
                kind: AllocKind::Munmap,
                base,
                length: pages * PAGE,
                callstack_id: k,
            });
        }
        objs.push((base, pages, start, free.unwrap_or(u64::MAX)));
        base += (pages + 1) * PAGE;
        total_pages += pages;
    }
    allocs.sort_by_key(|e| (e.timestamp, e.kind == AllocKind::Mmap));
    let n = rng.random_range(100..1_500);
    let hot = rng.random_range(0.0..1.0);
    let mut samples: Vec<MemorySample> = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.random_range(0..8 * SEC);
        let live: Vec<&(u64, u64, u64, u64)> = objs.iter().filter(|o| o.2 <= t && t < o.3).collect();
        let addr = if live.is_empty() {
            0x10_0000 + rng.random_range(0..4) * PAGE
        } else {
            let o = live[rng.random_range(0..live.len())];
            let pg = if rng.random_bool(hot) { 0 } else { rng.random_range(0..o.1) };
            o.0 + pg * PAGE + rng.random_range(0..PAGE)
        };
        samples.push(MemorySample {
            timestamp: t,
            thread_id: 0,
            addr,
            op: if rng.random_bool(0.1) { Op::Store } else { Op::Load },
            level: if rng.random_bool(0.1) { Level::L1 } else { Level::Unknown },
            latency: 100,
            tlb: if rng.random_bool(0.5) { TlbOutcome::Hit } else { TlbOutcome::Miss },
        });
    }
    samples.sort_by_key(|s| s.timestamp);
    let tmin = rng.random_range(1..50) * 1_000_000;
    let tmax = tmin * rng.random_range(1..200);
    let cfg = RunConfig {
        dram_capacity: (dram_pages + 4) * PAGE,
        reserved_dram: 4 * PAGE,
        nvm_capacity: (total_pages + 8) * PAGE,
        scan_period: rng.random_range(50..1_000) * 1_000_000,
        scan_batch: rng.random_range(1..32),
        promote_rate_limit: rng.random_range(1..16) * PAGE,
        threshold_min: tmin,
        threshold_max: tmax,
        threshold_init: rng.random_range(tmin..=tmax),
        threshold_adjust_window: rng.random_range(100..2_000) * 1_000_000,
        watermark_high: rng.random_range(0.9..1.0),
        watermark_low: 0.85,
        include_stores: rng.random_bool(0.5),
        ..RunConfig::default()
    };
    SimCase { allocs, samples, cfg }
}

fn c6_sim_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut promos, mut demos, mut bound_windows) = (0u64, 0u64, 0usize);
    for case in 0..100 {
        let c = random_sim_case(&mut rng);
        let table = build_object_table(&c.allocs, trace_end(&c.allocs, &c.samples)).map_err(|e| e.to_string())?;
        let attr = table.attribute_all(&c.samples);
        let enabled = case % 5 != 0;
        let rep = simulate(&c.allocs, &c.samples, &attr, &c.cfg, enabled).map_err(|e| format!("case {case}: {e}"))?;
        let fail = |m: String| Err(format!("case {case}: {m}"));

        let usable = c.cfg.usable_dram();
        let mut tier: HashMap<u64, Tier> = HashMap::new();
        let mut promoted: HashMap<u64, bool> = HashMap::new();
        let (mut dram, mut nvm) = (0u64, 0u64);
        let (mut ps, mut pd, mut dk, mut dd) = (0u64, 0u64, 0u64, 0u64);
        let mut last = (0u64, 0u64);
        for e in &rep.log {
            if (e.seq, e.timestamp) < last || e.timestamp < last.1 {
                return fail("log not in order".into());
            }
            last = (e.seq, e.timestamp);
            let cur = tier.get(&e.page).copied();
            match e.kind {
                MigrationKind::Commit(t) => {
                    if cur.is_some() {
                        return fail(format!("page {:#x} committed while resident", e.page));
                    }
                    tier.insert(e.page, t);
                    promoted.insert(e.page, false);
                    *if t == Tier::Dram { &mut dram } else { &mut nvm } += PAGE;
                }
                MigrationKind::Promote(_) => {
                    if cur != Some(Tier::Nvm) {
                        return fail(format!("promotion from {cur:?}"));
                    }
                    tier.insert(e.page, Tier::Dram);
                    promoted.insert(e.page, true);
                    dram += PAGE;
                    nvm -= PAGE;
                    ps += 1;
                }
                MigrationKind::Demote(cause) => {
                    if cur != Some(Tier::Dram) {
                        return fail(format!("demotion from {cur:?}"));
                    }
                    tier.insert(e.page, Tier::Nvm);
                    if promoted.insert(e.page, false) == Some(true) {
                        pd += 1;
                    }
                    dram -= PAGE;
                    nvm += PAGE;
                    match cause {
                        DemoteCause::Kswapd => dk += 1,
                        DemoteCause::Direct => dd += 1,
                    }
                }
                MigrationKind::Release(t) => {
                    if cur != Some(t) {
                        return fail(format!("release from {t:?} while on {cur:?}"));
                    }
                    tier.remove(&e.page);
                    *if t == Tier::Dram { &mut dram } else { &mut nvm } -= PAGE;
                }
            }
            if dram > usable || nvm > c.cfg.nvm_capacity {
                return fail(format!("residency {dram}/{nvm} over capacity"));
            }
            if pd > ps {
                return fail("pgpromote_demoted above pgpromote_success".into());
            }
        }
        let cn = rep.counters;
        if (cn.pgpromote_success, cn.pgpromote_demoted, cn.pgdemote_kswapd, cn.pgdemote_direct) != (ps, pd, dk, dd) {
            return fail(format!("counters {cn:?} differ from the log"));
        }
        if !enabled && (ps, pd, dk, dd) != (0, 0, 0, 0) {
            return fail("disabled run migrated pages".into());
        }
        for w in &rep.windows {
            if w.threshold < c.cfg.threshold_min || w.threshold > c.cfg.threshold_max {
                return fail(format!("threshold {} outside bounds", w.threshold));
            }
        }
        let paid: Vec<u64> = rep
            .log
            .iter()
            .filter(|e| e.kind == MigrationKind::Promote(PromoteReason::Threshold))
            .map(|e| e.timestamp)
            .collect();
        for (i, &t) in paid.iter().enumerate() {
            let n = paid[i..].iter().take_while(|&&u| u <= t + SEC).count() as u64;
            if n * PAGE > c.cfg.promote_rate_limit + PAGE {
                return fail(format!("{} bytes promoted in 1s from t={t}", n * PAGE));
            }
            if n * PAGE > c.cfg.promote_rate_limit {
                bound_windows += 1;
            }
        }
        promos += ps;
        demos += dk + dd;
    }
    Ok(format!(
        "100 traces: {promos} promotions, {demos} demotions, every check holds ({bound_windows} spans used the one-page slack)"
    ))
}

// 7 -------------------------------------------------------------------------

fn c7_single_touch_promotions(work: &Path) -> Outcome {
    let syn = work.join("bfs/synth");
    let out = work.join("bfs/sim");
    run_with("sim-autonuma", &syn, &["--enabled", "--out-dir", p(&out)])?;
    let f = out.join("sim_report.csv");
    let rate = metric(&f, "promote_rate_limit_bytes_per_s")?;
    let got = metric(&f, "promoted_bytes_per_s")?;
    let nvm = metric(&f, "nvm_samples")?;
    if nvm <= 0.0 {
        return Err("no DRAM pressure: nothing served from NVM".into());
    }
    if got >= 0.1 * rate {
        return Err(format!("promoted {got} B/s, limit {rate} B/s"));
    }
    Ok(format!(
        "{got:.1} B/s promoted against a {rate:.0} B/s limit ({:.3}%), {nvm} NVM samples",
        got / rate * 100.0
    ))
}

// 8 -------------------------------------------------------------------------

struct Instance {
    allocs: Vec<AllocationEvent>,
    samples: Vec<MemorySample>,
    /// (pages, samples per page) per object.
    objects: Vec<(u64, u64)>,
}

fn instance(rng: &mut ChaCha8Rng, n: usize, equal: bool) -> Instance {
    let eq_pages = rng.random_range(1..16u64);
    let mut allocs = Vec::new();
    let mut samples = Vec::new();
    let mut objects = Vec::new();
    let mut base = 0x6000_0000_0000u64;
    for k in 0..n {
        let pages = if equal { eq_pages } else { rng.random_range(1..24) };
        let per_page = rng.random_range(0..6u64);
        allocs.push(AllocationEvent {
            timestamp: 0,
            kind: AllocKind::Mmap,
            base,
            length: pages * PAGE,
            callstack_id: k as u64,
        });
        for pg in 0..pages {
            for j in 0..per_page {
                samples.push(MemorySample {
                    timestamp: 1 + j,
                    thread_id: 0,
                    addr: base + pg * PAGE + 64 * j,
                    op: Op::Load,
                    level: Level::Nvm,
                    latency: 1_000,
                    tlb: TlbOutcome::Hit,
                });
            }
        }
        objects.push((pages, per_page));
        base += (pages + 1) * PAGE;
    }
    samples.sort_by_key(|s| s.timestamp);
    Instance {
        allocs,
        samples,
        objects,
    }
}

fn c8_placement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cost = CostModel::preset("bc_kron").unwrap();
    let ps = PageSize::DEFAULT;
    let (mut spill_wins, mut optimal_checked) = (0, 0);
    for case in 0..1_000 {
        for equal in [false, true] {
            let n = rng.random_range(1..=15);
            let inst = instance(&mut rng, n, equal);
            let total: u64 = inst.objects.iter().map(|o| o.0).sum();
            let cap = rng.random_range(0..=total) * PAGE + rng.random_range(0..PAGE);
            let table = build_object_table(&inst.allocs, trace_end(&inst.allocs, &inst.samples)).map_err(|e| e.to_string())?;
            let attr = table.attribute_all(&inst.samples);
            let prof = profile_objects(&inst.samples, &attr, &table, false);
            let ranked = rank_objects(&prof.profiles, DensityBasis::External);
            let mut evals = Vec::new();
            for spill in [false, true] {
                let plan = assign_greedy(&ranked, cap, spill, ps);
                let mut used: u64 = plan
                    .assignment
                    .iter()
                    .filter(|(_, t)| **t == Tier::Dram)
                    .map(|(id, _)| table.get(*id).unwrap().length)
                    .sum();
                used += plan.spill.map(|s| s.1).unwrap_or(0);
                if used > cap || plan.dram_bytes_used != used {
                    return Err(format!("case {case}: plan uses {used} of {cap} bytes"));
                }
                let ev = evaluate_plan(&plan, &inst.samples, &attr, &table, &cost, false).map_err(|e| e.to_string())?;
                evals.push(ev.estimated_cycles);
            }
            if evals[1] > evals[0] {
                return Err(format!("case {case}: spill {} > no-spill {}", evals[1], evals[0]));
            }
            spill_wins += (evals[1] < evals[0]) as usize;
            if equal {
                // Exhaustive oracle over every subset that fits.
                let (dram, nvm) = (cost.dram_tlb_hit, cost.nvm_tlb_hit);
                let mut best = u64::MAX;
                for mask in 0u32..(1 << n) {
                    let mut bytes = 0;
                    let mut cycles = 0;
                    for (i, &(pages, per)) in inst.objects.iter().enumerate() {
                        let s = pages * per;
                        if mask & (1 << i) != 0 {
                            bytes += pages * PAGE;
                            cycles += s * dram;
                        } else {
                            cycles += s * nvm;
                        }
                    }
                    if bytes <= cap {
                        best = best.min(cycles);
                    }
                }
                if evals[0] != best {
                    return Err(format!("case {case}: greedy {} != optimum {best}", evals[0]));
                }
                optimal_checked += 1;
            }
        }
    }
    Ok(format!(
        "2000 instances within capacity; {optimal_checked} equal-size instances optimal; spill never worse ({spill_wins} strictly better)"
    ))
}

// 9 -------------------------------------------------------------------------

/// synth -> validate -> map -> sim-autonuma -> characterize -> plan ->
/// compare -> report for the bc_kron-shaped preset.
fn pipeline(root: &Path) -> Result<Duration, String> {
    let t0 = Instant::now();
    let syn = root.join("synth");
    run(&["synth", "--preset", "bc_kron_like", "--seed", "42", "--out-dir", p(&syn)])?;
    run_with("validate", &syn, &["--out-dir", p(&root.join("validate"))])?;
    run_with("map", &syn, &["--out-dir", p(&root.join("map"))])?;
    let sim = root.join("sim");
    run_with("sim-autonuma", &syn, &["--out-dir", p(&sim)])?;
    let log = sim.join("migration_log.csv");
    run_with("characterize", &syn, &["--out-dir", p(&root.join("char")), "--migration-log", p(&log), "--svg"])?;
    let plan = root.join("plan");
    run_with("plan", &syn, &["--spill", "--out-dir", p(&plan)])?;
    run(&[
        "compare",
        "--sim-report",
        p(&sim.join("sim_report.csv")),
        "--plan-eval",
        p(&plan.join("plan_eval.csv")),
        "--workload",
        "bc_kron_like",
        "--out-dir",
        p(&root.join("compare")),
    ])?;
    run(&["report", "--in-dir", p(root), "--out-dir", p(&root.join("report"))])?;
    Ok(t0.elapsed())
}

fn c9_static_vs_autonuma(work: &Path) -> Outcome {
    let root = work.join("bc_a");
    let elapsed = pipeline(&root)?;
    let text = fs::read_to_string(root.join("compare/comparison.csv")).map_err(|e| e.to_string())?;
    let t = CsvTable::parse(&text).map_err(|e| e.to_string())?;
    let red: f64 = t
        .lookup("workload", "bc_kron_like", "nvm_reduction_pct")
        .ok_or("no comparison row")?
        .parse()
        .map_err(|e| format!("{e}"))?;
    if red < 60.0 {
        return Err(format!("NVM sample reduction {red:.2}% < 60%"));
    }
    if elapsed >= Duration::from_secs(60) {
        return Err(format!("pipeline took {elapsed:?}"));
    }
    Ok(format!(
        "static plan cuts NVM samples by {red:.2}% vs simulated AutoNUMA; pipeline {:.1}s",
        elapsed.as_secs_f64()
    ))
}

// 10 ------------------------------------------------------------------------

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let mut bytes = fs::read(&p).unwrap();
                if p.file_name().unwrap() == "manifest.json" {
                    let text = String::from_utf8(bytes).unwrap();
                    bytes = text
                        .lines()
                        .filter(|l| !l.contains("_unix_ms"))
                        .collect::<Vec<_>>()
                        .join("\n")
                        .into_bytes();
                }
                out.insert(p.strip_prefix(root).unwrap().to_owned(), bytes);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn c10_determinism(work: &Path) -> Outcome {
    let a = work.join("bc_a");
    if !a.join("report/summary.csv").exists() {
        pipeline(&a)?;
    }
    let b = work.join("bc_b");
    pipeline(&b)?;
    let (ta, tb) = (tree(&a), tree(&b));
    if ta.keys().ne(tb.keys()) {
        return Err("output trees list different files".into());
    }
    for (k, v) in &ta {
        if tb[k] != *v {
            return Err(format!("{} differs between runs", k.display()));
        }
    }
    let manifests = ta.keys().filter(|k| k.ends_with("manifest.json")).count();
    Ok(format!(
        "{} files byte-identical across two runs ({manifests} manifests, wall-clock fields excluded)",
        ta.len()
    ))
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path();
    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "tier and cost split from the checked-in fixture", Box::new(|| c1_tier_split(work))),
        (2, "mean cost per tier and TLB outcome", Box::new(|| c2_tlb_costs(work))),
        (3, "touch histogram single-touch share", Box::new(|| c3_touch_histogram(work))),
        (4, "reuse percentiles against a sort oracle", Box::new(c4_reuse_percentiles)),
        (5, "attribution against a linear-scan oracle", Box::new(c5_mapping_oracle)),
        (6, "AutoNUMA simulator invariants", Box::new(c6_sim_invariants)),
        (7, "single-touch workload barely promotes", Box::new(|| c7_single_touch_promotions(work))),
        (8, "placement capacity, optimality and spill", Box::new(c8_placement)),
        (9, "static plan against simulated AutoNUMA", Box::new(|| c9_static_vs_autonuma(work))),
        (10, "byte-identical pipeline outputs", Box::new(|| c10_determinism(work))),
    ];
    let mut failed = Vec::new();
    for (n, name, f) in &criteria {
        let t0 = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match r {
            Ok(msg) => println!("criterion {n:>2} PASS  {name}: {msg} [{secs:.1}s]"),
            Err(msg) => {
                println!("criterion {n:>2} FAIL  {name}: {msg} [{secs:.1}s]");
                failed.push(*n);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
