use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use tierlab_core::autonuma::{
    audit, read_migration_log, relabel_samples, replay_residency, simulate, write_migration_log,
};
use tierlab_core::characterize::{
    detect_promotions, promotion_access_correlation, reuse_stats, tier_split, top_object_on,
    touch_histogram, usage_timeline_sim, usage_timeline_trace, write_reuse_row, ReuseFilter,
    REUSE_STATS_HEADER, TOUCH_HISTOGRAM_HEADER,
};
use tierlab_core::config::{load_config, parse_bytes, RateLimitPreset};
use tierlab_core::ingest::{parse_allocs, parse_samples};
use tierlab_core::mapping::{build_object_table, profile_objects, trace_end};
use tierlab_core::placement::{
    assign_greedy, assign_optimal, evaluate, evaluate_plan, object_costs, rank_objects,
    DensityBasis, TracedTiers, PLAN_EVAL_HEADER,
};
use tierlab_core::report::{figures, render, CsvTable, COMPARISON_HEADER};
use tierlab_core::synth::{preset, SynthOutput, WorkloadSpec};
use tierlab_core::{
    AllocationEvent, ComparisonSummary, MemorySample, Nanos, ObjectId, ObjectTable, RunConfig,
    Tier,
};

use crate::manifest::{sha256_hex, FileDigest, OutDir};
use crate::{CliError, TraceArgs};

type Res<T> = Result<T, CliError>;

fn read(path: &Path) -> Res<(Vec<u8>, FileDigest)> {
    let bytes = fs::read(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let d = FileDigest {
        name,
        sha256: sha256_hex(&bytes),
    };
    Ok((bytes, d))
}

struct Loaded {
    samples: Vec<MemorySample>,
    allocs: Vec<AllocationEvent>,
    config: RunConfig,
    table: ObjectTable,
    attr: Vec<Option<ObjectId>>,
    end: Nanos,
    digests: Vec<FileDigest>,
}

fn load(args: &TraceArgs) -> Res<Loaded> {
    let mut digests = Vec::new();
    let config = match &args.config {
        Some(p) => {
            let (_, d) = read(p)?;
            digests.push(d);
            load_config(p)?
        }
        None => RunConfig::default(),
    };
    let (sbytes, d) = read(&args.samples)?;
    digests.push(d);
    let (abytes, d) = read(&args.allocs)?;
    digests.push(d);
    let samples = parse_samples(&sbytes[..], &args.samples.display().to_string())?;
    let allocs = parse_allocs(&abytes[..], &args.allocs.display().to_string(), config.page_size)?;
    let end = trace_end(&allocs, &samples);
    let table = build_object_table(&allocs, end)?;
    for w in table.warnings() {
        eprintln!("tierlab: warning: {w}");
    }
    let attr = table.attribute_all(&samples);
    Ok(Loaded {
        samples,
        allocs,
        config,
        table,
        attr,
        end,
        digests,
    })
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Res<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn validate(args: &TraceArgs, out_dir: Option<&Path>) -> Res<String> {
    let l = load(args)?;
    let summary = format!(
        "ok: {} samples, {} allocation events, {} objects",
        l.samples.len(),
        l.allocs.len(),
        l.table.len()
    );
    if let Some(dir) = out_dir {
        let mut out = OutDir::create(dir, "validate")?;
        out.inputs(&l.digests);
        out.config(&l.config)?;
        let report = serde_json::json!({
            "samples": l.samples.len(),
            "allocation_events": l.allocs.len(),
            "objects": l.table.len(),
            "trace_end_ns": l.end,
            "warnings": l.table.warnings(),
        });
        out.put(
            "validation.json",
            (serde_json::to_string_pretty(&report).expect("json") + "\n").into_bytes(),
        )?;
        out.finish()?;
    }
    Ok(summary)
}

pub fn map(args: &TraceArgs, out_dir: &Path) -> Res<String> {
    let l = load(args)?;
    let prof = profile_objects(&l.samples, &l.attr, &l.table, l.config.include_stores);
    let mut out = OutDir::create(out_dir, "map")?;
    out.inputs(&l.digests);
    out.config(&l.config)?;
    out.put("objects.csv", csv_bytes(|w| l.table.write_csv(w))?)?;
    out.put("object_profiles.csv", csv_bytes(|w| prof.write_csv(w))?)?;
    out.finish()?;
    let unmapped: u64 = prof.unmapped_by_tier.iter().sum::<u64>() + prof.unmapped_unknown_tier;
    Ok(format!(
        "map: {} objects, {} profiled, {} unattributed memory samples",
        l.table.len(),
        prof.profiles.len(),
        unmapped
    ))
}

pub fn characterize(
    args: &TraceArgs,
    out_dir: &Path,
    migration_log: Option<&Path>,
    bucket: Nanos,
    window: Nanos,
    svg: bool,
) -> Res<String> {
    let mut l = load(args)?;
    let mut out = OutDir::create(out_dir, "characterize")?;
    out.param("bucket_ns", bucket);
    out.param("window_ns", window);
    let cfg = l.config.clone();
    let stores = cfg.include_stores;
    let page = cfg.page_size;
    let log = match migration_log {
        Some(p) => {
            let (bytes, d) = read(p)?;
            l.digests.push(d);
            Some(read_migration_log(&bytes[..], &p.display().to_string())?)
        }
        None => None,
    };
    out.inputs(&l.digests);
    out.config(&cfg)?;
    let resolved = log
        .as_ref()
        .map(|log| replay_residency(log, &l.samples, page, stores));
    let samples = match &resolved {
        Some(r) => relabel_samples(&l.samples, r),
        None => l.samples.clone(),
    };

    let split = tier_split::<f64>(&samples, stores);
    out.put("tier_split.csv", csv_bytes(|w| split.write_csv(w))?)?;

    let hist = csv_bytes(|w| {
        use std::io::Write;
        writeln!(w, "{TOUCH_HISTOGRAM_HEADER}")?;
        touch_histogram::<f64>(&samples, page, None, stores).write_csv(&mut *w, "all")?;
        for t in Tier::ALL {
            touch_histogram::<f64>(&samples, page, Some(t), stores).write_csv(&mut *w, t.token())?;
        }
        Ok(())
    })?;
    out.put("touch_histogram.csv", hist)?;

    let prof = profile_objects(&samples, &l.attr, &l.table, stores);
    let reuse = csv_bytes(|w| {
        use std::io::Write;
        writeln!(w, "{REUSE_STATS_HEADER}")?;
        for t in Tier::ALL {
            let f = ReuseFilter {
                tier: t,
                object: None,
                include_stores: stores,
            };
            write_reuse_row(&mut *w, "all", t, None, reuse_stats::<f64>(&samples, page, f).as_ref())?;
        }
        for t in Tier::ALL {
            if let Some(id) = top_object_on(&prof, t) {
                let f = ReuseFilter {
                    tier: t,
                    object: Some((&l.attr, id)),
                    include_stores: stores,
                };
                let st = reuse_stats::<f64>(&samples, page, f);
                write_reuse_row(&mut *w, "top_object", t, Some(id), st.as_ref())?;
            }
        }
        Ok(())
    })?;
    out.put("reuse_stats.csv", reuse)?;

    let promos = detect_promotions::<f64>(&samples, page, stores);
    out.put("promotions.csv", csv_bytes(|w| promos.write_csv(w))?)?;

    let timeline = match &log {
        Some(log) => usage_timeline_sim(log, page, bucket, l.end),
        None => usage_timeline_trace(&l.table, bucket, l.end),
    };
    out.put("timeline.csv", csv_bytes(|w| timeline.write_csv(w))?)?;

    if let (Some(log), Some(r)) = (&log, &resolved) {
        let corr = promotion_access_correlation::<f64>(&l.samples, r, log, window, l.end);
        out.put("promotion_correlation.csv", csv_bytes(|w| corr.write_csv(w))?)?;
    }
    if svg {
        for fig in figures() {
            let p = out.path().join(fig.input);
            if p.exists() {
                let text = fs::read_to_string(&p)?;
                out.put(fig.output, render(&text, &fig.chart)?.into_bytes())?;
            }
        }
    }
    out.finish()?;
    let share = |x: Option<f64>| x.map(|v| format!("{:.2}%", v * 100.0)).unwrap_or("NA".into());
    Ok(format!(
        "characterize: {} external samples, DRAM {} / NVM {}",
        split.external_samples,
        share(split.tier_share[0]),
        share(split.tier_share[1])
    ))
}

pub fn sim_autonuma(
    args: &TraceArgs,
    out_dir: &Path,
    enabled: bool,
    rate_limit: Option<&str>,
) -> Res<String> {
    let mut l = load(args)?;
    if let Some(r) = rate_limit {
        l.config.promote_rate_limit = match RateLimitPreset::from_name(r) {
            Some(p) => p.bytes_per_sec(),
            None => parse_bytes(r).map_err(CliError::Usage)?,
        };
        l.config.validate()?;
    }
    let rep = simulate(&l.allocs, &l.samples, &l.attr, &l.config, enabled)?;
    audit(&rep, &l.config).map_err(CliError::Invariant)?;
    let mut out = OutDir::create(out_dir, "sim-autonuma")?;
    out.param("enabled", enabled);
    out.inputs(&l.digests);
    out.config(&l.config)?;
    out.put("sim_report.csv", csv_bytes(|w| rep.write_csv(w))?)?;
    out.put("counters.csv", csv_bytes(|w| rep.counters.write_csv(w))?)?;
    out.put("migration_log.csv", csv_bytes(|w| write_migration_log(w, &rep.log))?)?;
    out.put("windows.csv", csv_bytes(|w| rep.write_windows_csv(w))?)?;
    out.put("residency.csv", csv_bytes(|w| rep.write_residency_csv(w))?)?;
    out.finish()?;
    Ok(format!(
        "sim-autonuma: {}, {} DRAM / {} NVM samples, {} promotions, {} demotions",
        if enabled { "enabled" } else { "disabled" },
        rep.samples_by_tier[0],
        rep.samples_by_tier[1],
        rep.counters.pgpromote_success,
        rep.counters.demotions()
    ))
}

pub fn plan(
    args: &TraceArgs,
    out_dir: &Path,
    spill: bool,
    dram_bytes: Option<u64>,
    density: &str,
    optimal: bool,
) -> Res<String> {
    let l = load(args)?;
    let basis: DensityBasis = density.parse().map_err(CliError::Usage)?;
    let cfg = &l.config;
    let stores = cfg.include_stores;
    let budget = dram_bytes.unwrap_or_else(|| cfg.usable_dram());
    let prof = profile_objects(&l.samples, &l.attr, &l.table, stores);
    let plan = if optimal {
        let costs = object_costs(&l.samples, &l.attr, &cfg.cost_model, stores);
        assign_optimal(&prof.profiles, budget, &costs)?
    } else {
        assign_greedy(&rank_objects(&prof.profiles, basis), budget, spill, cfg.page_size)
    };
    let traced = evaluate(&TracedTiers, &l.samples, &l.attr, &cfg.cost_model, stores)?;
    let ev = evaluate_plan(&plan, &l.samples, &l.attr, &l.table, &cfg.cost_model, stores)?;
    let mut out = OutDir::create(out_dir, "plan")?;
    out.param("spill", spill);
    out.param("optimal", optimal);
    out.param("density", density);
    out.param("dram_bytes", budget);
    out.inputs(&l.digests);
    out.config(cfg)?;
    out.put("plan.csv", csv_bytes(|w| plan.write_csv(w, &l.table))?)?;
    let evals = csv_bytes(|w| {
        use std::io::Write;
        writeln!(w, "{PLAN_EVAL_HEADER}")?;
        traced.write_csv(&mut *w, "traced")?;
        ev.write_csv(&mut *w, "plan")
    })?;
    out.put("plan_eval.csv", evals)?;
    out.finish()?;
    Ok(format!(
        "plan: {} objects in DRAM ({} bytes), {} NVM samples",
        plan.dram_set().len(),
        plan.dram_bytes_used,
        ev.nvm_samples()
    ))
}

pub fn compare(
    sim_report: &Path,
    plan_eval: &Path,
    out_dir: &Path,
    workload: &str,
    scenario: &str,
) -> Res<String> {
    let (sim, ds) = read(sim_report)?;
    let (ev, dp) = read(plan_eval)?;
    let text = |b: Vec<u8>, p: &Path| {
        String::from_utf8(b).map_err(|_| {
            CliError::Core(tierlab_core::Error::Parse {
                source_name: p.display().to_string(),
                line: 0,
                message: "not UTF-8".into(),
            })
        })
    };
    let c = ComparisonSummary::from_csv(workload, &text(sim, sim_report)?, &text(ev, plan_eval)?, scenario)?;
    let mut out = OutDir::create(out_dir, "compare")?;
    out.param("workload", workload);
    out.param("scenario", scenario);
    out.inputs(&[ds, dp]);
    out.put("comparison.csv", csv_bytes(|w| ComparisonSummary::write_csv(std::slice::from_ref(&c), w))?)?;
    out.finish()?;
    let pct = |v: Option<f64>| v.map(|v| format!("{:.2}%", v * 100.0)).unwrap_or("NA".into());
    Ok(format!(
        "compare: {workload}: NVM samples {} -> {} (reduction {}), cycles delta {}",
        c.baseline_nvm_samples,
        c.plan_nvm_samples,
        pct(c.nvm_reduction),
        pct(c.cycle_delta)
    ))
}

pub fn synth(name: Option<&str>, spec: Option<&Path>, seed: Option<u64>, out_dir: &Path) -> Res<String> {
    let mut out = OutDir::create(out_dir, "synth")?;
    let generated = match (name, spec) {
        (Some(n), None) => {
            out.param("preset", n);
            preset(n, seed.unwrap_or(0))?
        }
        (None, Some(p)) => {
            let (bytes, d) = read(p)?;
            out.inputs(&[d]);
            let text = String::from_utf8_lossy(&bytes);
            let mut spec = WorkloadSpec::from_json(&text)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let config = RunConfig {
                rng_seed: spec.seed,
                ..RunConfig::default()
            };
            SynthOutput::from_spec(spec, config)?
        }
        _ => return Err(CliError::Usage("exactly one of --preset and --spec is required".into())),
    };
    out.param("seed", generated.spec.seed);
    for f in generated.write_dir(out.path())? {
        out.adopt(f)?;
    }
    out.finish()?;
    Ok(format!(
        "synth: {} with {} samples, {} allocation events",
        generated.spec.name,
        generated.trace.samples.len(),
        generated.trace.allocs.len()
    ))
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

pub fn report(in_dir: &Path, out_dir: &Path) -> Res<String> {
    let mut files = Vec::new();
    walk(in_dir, &mut files).map_err(|source| CliError::Io {
        path: in_dir.display().to_string(),
        source,
    })?;
    let out_abs = fs::canonicalize(out_dir).ok();
    files.retain(|p| {
        out_abs
            .as_ref()
            .is_none_or(|o| p.parent().and_then(|d| fs::canonicalize(d).ok()).as_ref() != Some(o))
    });
    let named = |n: &str| -> Vec<&PathBuf> {
        files
            .iter()
            .filter(|p| p.file_name().is_some_and(|f| f == n))
            .collect()
    };
    let mut jobs = Vec::new();
    for fig in figures() {
        let found = named(fig.input);
        let many = found.len() > 1;
        for p in found {
            let name = if many {
                let rel = p
                    .parent()
                    .and_then(|d| d.strip_prefix(in_dir).ok())
                    .map(|r| r.to_string_lossy().replace(['/', '\\'], "_"))
                    .unwrap_or_default();
                fig.output.replace(".svg", &format!("_{rel}.svg"))
            } else {
                fig.output.to_owned()
            };
            jobs.push((name, p.clone(), fig.chart.clone()));
        }
    }
    let rendered: Vec<(String, PathBuf, Result<String, CliError>)> = jobs
        .into_par_iter()
        .map(|(name, p, chart)| {
            let r = fs::read_to_string(&p)
                .map_err(CliError::from)
                .and_then(|t| render(&t, &chart).map_err(CliError::from));
            (name, p, r)
        })
        .collect();
    let mut out = OutDir::create(out_dir, "report")?;
    let mut inputs = Vec::new();
    let mut count = 0;
    for (name, p, svg) in rendered {
        let svg = svg.map_err(|e| match e {
            CliError::Core(tierlab_core::Error::Schema { missing }) => CliError::Core(tierlab_core::Error::Parse {
                source_name: p.display().to_string(),
                line: 1,
                message: format!("schema mismatch: missing columns {missing:?}"),
            }),
            e => e,
        })?;
        inputs.push(read(&p)?.1);
        out.put(&name, svg.into_bytes())?;
        count += 1;
    }
    let mut summary = format!("{COMPARISON_HEADER}\n");
    let cols: Vec<&str> = COMPARISON_HEADER.split(',').collect();
    let mut rows = 0;
    for p in named("comparison.csv") {
        let t = CsvTable::parse(&fs::read_to_string(p)?)?;
        let idx = t.require(&cols)?;
        for r in &t.rows {
            let line: Vec<&str> = idx.iter().map(|&i| r[i].as_str()).collect();
            summary.push_str(&line.join(","));
            summary.push('\n');
            rows += 1;
        }
    }
    inputs.sort_by(|a, b| a.name.cmp(&b.name).then(a.sha256.cmp(&b.sha256)));
    inputs.dedup_by(|a, b| a.name == b.name && a.sha256 == b.sha256);
    out.inputs(&inputs);
    out.put("summary.csv", summary.into_bytes())?;
    out.finish()?;
    Ok(format!("report: {count} figures, {rows} comparison rows"))
}
