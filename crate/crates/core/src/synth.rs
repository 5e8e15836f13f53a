//! Seeded synthetic traces built from a handful of access-pattern archetypes.
//!
//! Randomness comes from ChaCha20 (`rand_chacha`), seeded with
//! `seed_from_u64(seed)`. Each object draws from its own stream (stream id =
//! object index + 1), so adding an object does not perturb the others.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::config::{de_bytes, de_duration, de_opt_duration, CostModel, RunConfig};
use crate::ingest::{write_allocs, write_samples};
use crate::trace::{
    AllocKind, AllocationEvent, Level, MemorySample, Nanos, Op, PageSize, Tier, TlbOutcome,
    NANOS_PER_SEC,
};
use crate::{Error, Result, TRACE_FORMAT_VERSION};

pub const RNG_ALGORITHM: &str =
    "ChaCha20 (rand_chacha 0.9), seed_from_u64, stream = object index + 1";

/// First object base; later objects follow with a one-page gap.
pub const BASE_ADDRESS: u64 = 0x7f00_0000_0000;

const WEIGHT_TOLERANCE: f64 = 1e-6;

/// Cycles charged to cache-served samples, by level.
const CACHE_LATENCY: [(Level, u32); 4] = [
    (Level::L1, 4),
    (Level::L2, 14),
    (Level::L3, 60),
    (Level::Lfb, 120),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GapDist {
    Constant {
        #[serde(deserialize_with = "de_duration")]
        gap: Nanos,
    },
    /// Uniform on `[min, max]`.
    Uniform {
        #[serde(deserialize_with = "de_duration")]
        min: Nanos,
        #[serde(deserialize_with = "de_duration")]
        max: Nanos,
    },
}

impl GapDist {
    fn max(&self) -> Nanos {
        match *self {
            GapDist::Constant { gap } => gap,
            GapDist::Uniform { max, .. } => max,
        }
    }

    fn draw(&self, rng: &mut ChaCha20Rng) -> Nanos {
        match *self {
            GapDist::Constant { gap } => gap,
            GapDist::Uniform { min, max } => rng.random_range(min..=max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pattern {
    /// Each thread walks its partition front to back, one sample per page.
    SingleTouchSweep,
    UniformRandom,
    /// Pages touched exactly twice, `gap` apart.
    TwoTouchGap {
        gap: GapDist,
    },
    /// `hot_weight` of the samples land in the first `hot_fraction` of each
    /// thread's partition.
    HotColdSkew {
        hot_fraction: f64,
        hot_weight: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    #[serde(deserialize_with = "de_bytes")]
    pub size: u64,
    pub pattern: Pattern,
    /// Share of the workload's samples.
    pub weight: f64,
    /// Start of the access window; the object is mapped here.
    #[serde(default, deserialize_with = "de_duration")]
    pub start: Nanos,
    /// End of the access window, default the workload duration.
    #[serde(
        default,
        deserialize_with = "de_opt_duration",
        skip_serializing_if = "Option::is_none"
    )]
    pub end: Option<Nanos>,
    /// Unmap time; never unmapped when absent.
    #[serde(
        default,
        deserialize_with = "de_opt_duration",
        skip_serializing_if = "Option::is_none"
    )]
    pub free_at: Option<Nanos>,
    /// Traced mode only: share of pages labelled NVM.
    #[serde(default)]
    pub nvm_fraction: f64,
    #[serde(default)]
    pub callstack_id: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelMode {
    /// External samples carry `NA`; the simulator decides residency.
    #[default]
    Unknown,
    /// External samples carry a fixed per-page tier.
    Traced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(deserialize_with = "de_duration")]
    pub duration: Nanos,
    /// Samples per second, cache hits included.
    pub sample_rate: f64,
    pub threads: u16,
    /// Share of samples served by DRAM or NVM.
    pub external_fraction: f64,
    #[serde(default)]
    pub tlb_miss_fraction: f64,
    #[serde(default)]
    pub levels: LevelMode,
    /// Row of the measured cost table used as latency means.
    #[serde(default = "default_latency_model")]
    pub latency_model: String,
    /// Relative half-width of the uniform latency noise.
    #[serde(default)]
    pub latency_jitter: f64,
    pub objects: Vec<ObjectSpec>,
}

fn default_latency_model() -> String {
    "bc_kron".to_owned()
}

impl WorkloadSpec {
    pub fn from_json(text: &str) -> Result<WorkloadSpec> {
        let spec: WorkloadSpec =
            serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes") + "\n"
    }

    pub fn total_samples(&self) -> u64 {
        (self.duration as f64 / NANOS_PER_SEC as f64 * self.sample_rate).round() as u64
    }

    pub fn external_samples(&self) -> u64 {
        (self.total_samples() as f64 * self.external_fraction).round() as u64
    }

    fn latency_costs(&self) -> Result<CostModel> {
        CostModel::preset(&self.latency_model).ok_or_else(|| {
            Error::InvalidSpec(format!("unknown latency_model {:?}", self.latency_model))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let frac = |name: &str, v: f64, errs: &mut Vec<String>| {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("{name} must lie in [0, 1], got {v}"));
            }
        };
        if self.duration == 0 {
            errs.push("duration must be > 0".to_owned());
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            errs.push(format!("sample_rate must be > 0, got {}", self.sample_rate));
        }
        if self.threads == 0 {
            errs.push("threads must be > 0".to_owned());
        }
        frac("external_fraction", self.external_fraction, &mut errs);
        frac("tlb_miss_fraction", self.tlb_miss_fraction, &mut errs);
        frac("latency_jitter", self.latency_jitter, &mut errs);
        if let Err(Error::InvalidSpec(m)) = self.latency_costs() {
            errs.push(m);
        }
        if self.objects.is_empty() {
            errs.push("objects must not be empty".to_owned());
        }
        let page = PageSize::DEFAULT.bytes();
        let mut sum = 0.0;
        for (i, o) in self.objects.iter().enumerate() {
            let at = |m: String| format!("objects[{i}]: {m}");
            sum += o.weight;
            if !(o.weight.is_finite() && o.weight >= 0.0) {
                errs.push(at(format!("weight must be >= 0, got {}", o.weight)));
            }
            frac(
                &format!("objects[{i}].nvm_fraction"),
                o.nvm_fraction,
                &mut errs,
            );
            let pages = o.size.div_ceil(page);
            if pages < self.threads as u64 {
                errs.push(at(format!(
                    "{pages} pages cannot be split across {} threads",
                    self.threads
                )));
            }
            let end = o.end.unwrap_or(self.duration);
            if o.start >= end {
                errs.push(at(format!("start ({}) must precede end ({end})", o.start)));
            }
            if end > self.duration {
                errs.push(at(format!(
                    "end ({end}) exceeds duration ({})",
                    self.duration
                )));
            }
            if let Some(f) = o.free_at {
                if f < end {
                    errs.push(at(format!("free_at ({f}) precedes end ({end})")));
                }
            }
            match &o.pattern {
                Pattern::TwoTouchGap { gap } => {
                    if let GapDist::Uniform { min, max } = gap {
                        if min > max {
                            errs.push(at(format!("gap min ({min}) exceeds max ({max})")));
                        }
                    }
                    if gap.max() >= end.saturating_sub(o.start) {
                        errs.push(at("gap must be shorter than the access window".to_owned()));
                    }
                }
                Pattern::HotColdSkew {
                    hot_fraction,
                    hot_weight,
                } => {
                    if !(*hot_fraction > 0.0 && *hot_fraction < 1.0) {
                        errs.push(at(format!(
                            "hot_fraction must lie in (0, 1), got {hot_fraction}"
                        )));
                    }
                    frac(&format!("objects[{i}].hot_weight"), *hot_weight, &mut errs);
                }
                Pattern::SingleTouchSweep | Pattern::UniformRandom => {}
            }
        }
        if !self.objects.is_empty() && (sum - 1.0).abs() > WEIGHT_TOLERANCE {
            errs.push(format!("object weights sum to {sum}, not 1"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(errs.join("; ")))
        }
    }
}

/// Splits `total` in proportion to `weights`, handing the rounding remainder
/// to the largest fractional parts (lower index first on ties).
pub fn apportion(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order
        .iter()
        .cycle()
        .take(total.saturating_sub(assigned) as usize)
    {
        out[i] += 1;
    }
    out
}

/// `[start, end)` page range of thread `j` of `threads` over `pages` pages.
/// The ranges tile `0..pages`.
pub fn thread_partition(pages: u64, threads: u64, j: u64) -> (u64, u64) {
    (j * pages / threads, (j + 1) * pages / threads)
}

/// Even spread of `n` instants over `[start, end)`; `phase` in [0, 1) shifts
/// them within their slot.
fn spread(start: Nanos, end: Nanos, n: u64, k: u64, phase_num: u64, phase_den: u64) -> Nanos {
    let span = (end - start) as u128;
    let slot = (k as u128 * phase_den as u128 + phase_num as u128) * span;
    start + (slot / (n as u128 * phase_den as u128)) as Nanos
}

/// Whether page `p` of an object is labelled NVM. Spreads the NVM pages
/// evenly, exactly `floor(pages * fraction)` of them.
fn traced_nvm(p: u64, fraction: f64) -> bool {
    ((p + 1) as f64 * fraction).floor() > (p as f64 * fraction).floor()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthTrace {
    pub samples: Vec<MemorySample>,
    pub allocs: Vec<AllocationEvent>,
}

struct Draft {
    t: Nanos,
    object: usize,
    seq: usize,
    sample: MemorySample,
}

fn jitter(mean: u64, j: f64, rng: &mut ChaCha20Rng) -> u32 {
    let f = if j > 0.0 {
        rng.random_range(-j..=j)
    } else {
        0.0
    };
    ((mean as f64 * (1.0 + f)).round().max(1.0)) as u32
}

/// Generates the trace for a validated spec.
pub fn generate(spec: &WorkloadSpec) -> Result<SynthTrace> {
    spec.validate()?;
    let page = PageSize::DEFAULT.bytes();
    let costs = spec.latency_costs()?;
    let weights: Vec<f64> = spec.objects.iter().map(|o| o.weight).collect();
    let n_total = spec.total_samples();
    let n_ext = spec.external_samples();
    let ext = apportion(n_ext, &weights);
    let non = apportion(n_total - n_ext, &weights);
    let threads = spec.threads as u64;

    let mut allocs = Vec::new();
    let mut drafts: Vec<Draft> = Vec::with_capacity(n_total as usize);
    let mut base = BASE_ADDRESS;
    for (oi, o) in spec.objects.iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
        rng.set_stream(oi as u64 + 1);
        let pages = o.size.div_ceil(page);
        let start = o.start;
        let end = o.end.unwrap_or(spec.duration);
        allocs.push(AllocationEvent {
            timestamp: start,
            kind: AllocKind::Mmap,
            base,
            length: o.size,
            callstack_id: o.callstack_id,
        });
        if let Some(f) = o.free_at {
            allocs.push(AllocationEvent {
                timestamp: f,
                kind: AllocKind::Munmap,
                base,
                length: o.size,
                callstack_id: o.callstack_id,
            });
        }

        // (time, thread, page) for every external sample.
        let n = ext[oi];
        let mut touches: Vec<(Nanos, u64, u64)> = Vec::with_capacity(n as usize);
        for j in 0..threads {
            let (p0, p1) = thread_partition(pages, threads, j);
            let len = p1 - p0;
            // Samples k with k % threads == j.
            let nj = n / threads + u64::from(j < n % threads);
            match &o.pattern {
                Pattern::SingleTouchSweep => {
                    for m in 0..nj {
                        let k = m * threads + j;
                        let p = p0 + (m * len / nj) % len;
                        touches.push((spread(start, end, n, k, 0, 1), j, p));
                    }
                }
                Pattern::UniformRandom => {
                    for m in 0..nj {
                        let k = m * threads + j;
                        let p = p0 + rng.random_range(0..len);
                        touches.push((spread(start, end, n, k, 0, 1), j, p));
                    }
                }
                Pattern::HotColdSkew {
                    hot_fraction,
                    hot_weight,
                } => {
                    let hot = ((len as f64 * hot_fraction).ceil() as u64).clamp(1, len);
                    for m in 0..nj {
                        let k = m * threads + j;
                        let p = if hot == len || rng.random_bool(*hot_weight) {
                            p0 + rng.random_range(0..hot)
                        } else {
                            p0 + hot + rng.random_range(0..len - hot)
                        };
                        touches.push((spread(start, end, n, k, 0, 1), j, p));
                    }
                }
                Pattern::TwoTouchGap { gap } => {
                    let pairs = nj / 2;
                    let first_end = end - gap.max();
                    for m in 0..pairs {
                        let p = p0 + (m * len / pairs) % len;
                        let t1 = spread(start, first_end, pairs, m, j, threads);
                        let t2 = t1 + gap.draw(&mut rng);
                        touches.push((t1, j, p));
                        touches.push((t2, j, p));
                    }
                    if nj % 2 == 1 {
                        let p = p0 + rng.random_range(0..len);
                        touches.push((spread(start, end, 1, 0, j, threads), j, p));
                    }
                }
            }
        }

        for (seq, (t, thread, p)) in touches.into_iter().enumerate() {
            let tlb = if rng.random_bool(spec.tlb_miss_fraction) {
                TlbOutcome::Miss
            } else {
                TlbOutcome::Hit
            };
            let (level, mean) = match spec.levels {
                LevelMode::Traced => {
                    let tier = if traced_nvm(p, o.nvm_fraction) {
                        Tier::Nvm
                    } else {
                        Tier::Dram
                    };
                    (tier.into(), costs.cycles(tier, tlb))
                }
                LevelMode::Unknown => (
                    Level::Unknown,
                    (costs.cycles(Tier::Dram, tlb) + costs.cycles(Tier::Nvm, tlb)) / 2,
                ),
            };
            let offset = rng.random_range(0..page / 64) * 64;
            drafts.push(Draft {
                t,
                object: oi,
                seq,
                sample: MemorySample {
                    timestamp: t,
                    thread_id: thread as u16,
                    addr: base + (p * page + offset).min(o.size - 1) / 8 * 8,
                    op: Op::Load,
                    level,
                    latency: jitter(mean, spec.latency_jitter, &mut rng),
                    tlb,
                },
            });
        }

        let nn = non[oi];
        let base_seq = drafts.len();
        for k in 0..nn {
            let (level, mean) = CACHE_LATENCY[rng.random_range(0..CACHE_LATENCY.len())];
            let t = spread(start, end, nn, k, 1, 2);
            let addr = base + rng.random_range(0..o.size) / 8 * 8;
            drafts.push(Draft {
                t,
                object: oi,
                seq: base_seq + k as usize,
                sample: MemorySample {
                    timestamp: t,
                    thread_id: (k % threads) as u16,
                    addr,
                    op: Op::Load,
                    level,
                    latency: jitter(mean as u64, spec.latency_jitter, &mut rng),
                    tlb: TlbOutcome::Hit,
                },
            });
        }
        base += pages * page + page;
    }

    drafts.sort_by_key(|d| (d.t, d.object, d.seq));
    allocs.sort_by_key(|a| (a.timestamp, a.kind == AllocKind::Munmap, a.base));
    Ok(SynthTrace {
        samples: drafts.into_iter().map(|d| d.sample).collect(),
        allocs,
    })
}

/// A generated workload with the configuration it is meant to run under.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub spec: WorkloadSpec,
    pub config: RunConfig,
    pub trace: SynthTrace,
}

#[derive(Serialize)]
struct Meta<'a> {
    generator: &'a str,
    rng: &'a str,
    seed: u64,
    workload: &'a str,
    trace_format_version: u32,
    samples: usize,
    external_samples: usize,
    allocation_events: usize,
}

impl SynthOutput {
    pub fn from_spec(spec: WorkloadSpec, config: RunConfig) -> Result<SynthOutput> {
        let trace = generate(&spec)?;
        Ok(SynthOutput {
            spec,
            config,
            trace,
        })
    }

    /// Writes `samples.csv`, `allocs.csv`, `config.json`, `workload.json` and
    /// `synth_meta.json`; returns the file names written.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<&'static str>> {
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(fs::File::create(dir.join("samples.csv"))?);
        write_samples(&mut w, &self.trace.samples)?;
        w.flush()?;
        let mut w = BufWriter::new(fs::File::create(dir.join("allocs.csv"))?);
        write_allocs(&mut w, &self.trace.allocs)?;
        w.flush()?;
        fs::write(dir.join("config.json"), self.config.to_json())?;
        fs::write(dir.join("workload.json"), self.spec.to_json())?;
        let meta = Meta {
            generator: "tierlab synth",
            rng: RNG_ALGORITHM,
            seed: self.spec.seed,
            workload: &self.spec.name,
            trace_format_version: TRACE_FORMAT_VERSION,
            samples: self.trace.samples.len(),
            external_samples: self
                .trace
                .samples
                .iter()
                .filter(|s| s.level.reaches_memory())
                .count(),
            allocation_events: self.trace.allocs.len(),
        };
        fs::write(
            dir.join("synth_meta.json"),
            serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n",
        )?;
        Ok(vec![
            "samples.csv",
            "allocs.csv",
            "config.json",
            "workload.json",
            "synth_meta.json",
        ])
    }
}

pub const PRESETS: [&str; 5] = [
    "bc_kron_like",
    "bfs_kron_like",
    "uniform_cold",
    "cc_urand_like",
    "table_fixture",
];

const PAGE: u64 = 4096;
const SEC: Nanos = NANOS_PER_SEC;

fn obj(size: u64, pattern: Pattern, weight: f64) -> ObjectSpec {
    ObjectSpec {
        size,
        pattern,
        weight,
        start: 0,
        end: None,
        free_at: None,
        nvm_fraction: 0.0,
        callstack_id: 0,
    }
}

/// Graph-analytics shape at 1/1000 scale: a small always-hot object, a
/// start-up sweep that fills DRAM, one dense 8 MB object carrying most of
/// the NVM traffic, and two late sweeps.
pub fn bc_kron_like(seed: u64) -> (WorkloadSpec, RunConfig) {
    let late = |mut o: ObjectSpec| {
        o.start = 10 * SEC;
        o.callstack_id = 0;
        o
    };
    let objects = vec![
        ObjectSpec {
            callstack_id: 1,
            ..obj(512 * PAGE, Pattern::UniformRandom, 0.05)
        },
        ObjectSpec {
            end: Some(10 * SEC),
            callstack_id: 2,
            ..obj(24_200 * PAGE, Pattern::SingleTouchSweep, 0.12)
        },
        ObjectSpec {
            nvm_fraction: 0.5,
            callstack_id: 3,
            ..late(obj(2_048 * PAGE, Pattern::UniformRandom, 0.60))
        },
        ObjectSpec {
            nvm_fraction: 0.7,
            callstack_id: 4,
            ..late(obj(21_200 * PAGE, Pattern::SingleTouchSweep, 0.105))
        },
        ObjectSpec {
            nvm_fraction: 0.7,
            callstack_id: 5,
            ..late(obj(25_200 * PAGE, Pattern::SingleTouchSweep, 0.125))
        },
    ];
    let spec = WorkloadSpec {
        name: "bc_kron_like".into(),
        seed,
        duration: 60 * SEC,
        sample_rate: 6_800.0,
        threads: 18,
        external_fraction: 0.491,
        tlb_miss_fraction: 0.3,
        levels: LevelMode::Traced,
        latency_model: "bc_kron".into(),
        latency_jitter: 0.1,
        objects,
    };
    let config = RunConfig {
        watermark_high: 0.995,
        watermark_low: 0.99,
        cost_model: CostModel::preset("bc_kron").expect("row"),
        rng_seed: seed,
        ..RunConfig::default()
    };
    (spec, config)
}

/// Four consecutive single-touch frontier sweeps, each larger than DRAM and
/// freed when done, next to a small hot object.
pub fn bfs_kron_like(seed: u64) -> (WorkloadSpec, RunConfig) {
    let quarter = 12_500_000_000u64;
    let mut objects = vec![ObjectSpec {
        callstack_id: 1,
        ..obj(512 * PAGE, Pattern::UniformRandom, 0.2)
    }];
    for q in 0..4 {
        objects.push(ObjectSpec {
            start: q * quarter,
            end: Some((q + 1) * quarter),
            free_at: Some((q + 1) * quarter),
            nvm_fraction: 0.4,
            callstack_id: 2,
            ..obj(40_960 * PAGE, Pattern::SingleTouchSweep, 0.2)
        });
    }
    let spec = WorkloadSpec {
        name: "bfs_kron_like".into(),
        seed,
        duration: 50 * SEC,
        sample_rate: 20_000.0,
        threads: 16,
        external_fraction: 0.2,
        tlb_miss_fraction: 0.3,
        levels: LevelMode::Traced,
        latency_model: "bfs_kron".into(),
        latency_jitter: 0.1,
        objects,
    };
    let config = RunConfig {
        cost_model: CostModel::preset("bfs_kron").expect("row"),
        rng_seed: seed,
        ..RunConfig::default()
    };
    (spec, config)
}

/// One large object read uniformly at random; tiers left to the simulator.
pub fn uniform_cold(seed: u64) -> (WorkloadSpec, RunConfig) {
    let spec = WorkloadSpec {
        name: "uniform_cold".into(),
        seed,
        duration: 30 * SEC,
        sample_rate: 4_000.0,
        threads: 8,
        external_fraction: 1.0,
        tlb_miss_fraction: 0.5,
        levels: LevelMode::Unknown,
        latency_model: "bc_urand".into(),
        latency_jitter: 0.0,
        objects: vec![obj(65_536 * PAGE, Pattern::UniformRandom, 1.0)],
    };
    let config = RunConfig {
        cost_model: CostModel::preset("bc_urand").expect("row"),
        rng_seed: seed,
        ..RunConfig::default()
    };
    (spec, config)
}

/// Two random-access objects split across tiers, latencies drawn around
/// the cc_urand means.
pub fn cc_urand_like(seed: u64) -> (WorkloadSpec, RunConfig) {
    let half = |id| ObjectSpec {
        nvm_fraction: 0.5,
        callstack_id: id,
        ..obj(16_384 * PAGE, Pattern::UniformRandom, 0.5)
    };
    let spec = WorkloadSpec {
        name: "cc_urand_like".into(),
        seed,
        duration: 20 * SEC,
        sample_rate: 5_000.0,
        threads: 8,
        external_fraction: 0.5,
        tlb_miss_fraction: 0.5,
        levels: LevelMode::Traced,
        latency_model: "cc_urand".into(),
        latency_jitter: 0.1,
        objects: vec![half(1), half(2)],
    };
    let config = RunConfig {
        cost_model: CostModel::preset("cc_urand").expect("row"),
        rng_seed: seed,
        ..RunConfig::default()
    };
    (spec, config)
}

/// External-sample counts of the table fixture by (tier, TLB outcome):
/// DRAM hit, DRAM miss, NVM hit, NVM miss.
pub const TABLE_FIXTURE_EXTERNAL: [u64; 4] = [3_933, 2_714, 952, 2_221];
pub const TABLE_FIXTURE_CACHE_HITS: u64 = 10_180;

/// Exact-count fixture with constant bc_kron latencies: 9,820 external out
/// of 20,000 samples, 6,647 on DRAM.
pub fn table_fixture(seed: u64) -> SynthOutput {
    let costs = CostModel::preset("bc_kron").expect("row");
    let size = 16_384 * PAGE;
    let mut kinds: Vec<(Level, TlbOutcome)> = Vec::new();
    let cells = [
        (Level::Dram, TlbOutcome::Hit),
        (Level::Dram, TlbOutcome::Miss),
        (Level::Nvm, TlbOutcome::Hit),
        (Level::Nvm, TlbOutcome::Miss),
    ];
    for (cell, n) in cells.iter().zip(TABLE_FIXTURE_EXTERNAL) {
        kinds.extend(std::iter::repeat_n(*cell, n as usize));
    }
    for i in 0..TABLE_FIXTURE_CACHE_HITS {
        kinds.push((CACHE_LATENCY[i as usize % 4].0, TlbOutcome::Hit));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    kinds.shuffle(&mut rng);
    let samples = kinds
        .into_iter()
        .enumerate()
        .map(|(i, (level, tlb))| {
            let latency = match level.tier() {
                Some(t) => costs.cycles(t, tlb) as u32,
                None => {
                    CACHE_LATENCY
                        .iter()
                        .find(|c| c.0 == level)
                        .expect("cache level")
                        .1
                }
            };
            MemorySample {
                timestamp: 1_000 + i as u64 * 1_000,
                thread_id: (i % 4) as u16,
                addr: BASE_ADDRESS + rng.random_range(0..size) / 8 * 8,
                op: Op::Load,
                level,
                latency,
                tlb,
            }
        })
        .collect();
    let allocs = vec![AllocationEvent {
        timestamp: 0,
        kind: AllocKind::Mmap,
        base: BASE_ADDRESS,
        length: size,
        callstack_id: 1,
    }];
    let n = TABLE_FIXTURE_EXTERNAL.iter().sum::<u64>() + TABLE_FIXTURE_CACHE_HITS;
    let spec = WorkloadSpec {
        name: "table_fixture".into(),
        seed,
        duration: (n + 1) * 1_000,
        sample_rate: NANOS_PER_SEC as f64 / 1_000.0,
        threads: 4,
        external_fraction: 9_820.0 / 20_000.0,
        tlb_miss_fraction: 0.0,
        levels: LevelMode::Traced,
        latency_model: "bc_kron".into(),
        latency_jitter: 0.0,
        objects: vec![obj(size, Pattern::UniformRandom, 1.0)],
    };
    let config = RunConfig {
        cost_model: costs,
        rng_seed: seed,
        ..RunConfig::default()
    };
    SynthOutput {
        spec,
        config,
        trace: SynthTrace { samples, allocs },
    }
}

/// Builds a named preset.
pub fn preset(name: &str, seed: u64) -> Result<SynthOutput> {
    let (spec, config) = match name {
        "bc_kron_like" => bc_kron_like(seed),
        "bfs_kron_like" => bfs_kron_like(seed),
        "uniform_cold" => uniform_cold(seed),
        "cc_urand_like" => cc_urand_like(seed),
        "table_fixture" => return Ok(table_fixture(seed)),
        other => {
            return Err(Error::InvalidSpec(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    SynthOutput::from_spec(spec, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characterize::{reuse_stats, touch_histogram, two_touch_gaps, ReuseFilter};
    use crate::mapping::{build_object_table, trace_end};
    use proptest::prelude::*;

    fn one(pattern: Pattern, size: u64, rate: f64) -> WorkloadSpec {
        WorkloadSpec {
            name: "t".into(),
            seed: 7,
            duration: 10 * SEC,
            sample_rate: rate,
            threads: 4,
            external_fraction: 1.0,
            tlb_miss_fraction: 0.0,
            levels: LevelMode::Traced,
            latency_model: "bc_kron".into(),
            latency_jitter: 0.0,
            objects: vec![obj(size, pattern, 1.0)],
        }
    }

    #[test]
    fn apportion_largest_remainder() {
        assert_eq!(apportion(10, &[0.5, 0.25, 0.25]), vec![5, 3, 2]);
        assert_eq!(apportion(7, &[1.0 / 3.0; 3]), vec![3, 2, 2]);
        assert_eq!(apportion(0, &[1.0]), vec![0]);
    }

    #[test]
    fn sweep_is_all_single_touch() {
        let spec = one(Pattern::SingleTouchSweep, 4_000 * PAGE, 390.0);
        let tr = generate(&spec).unwrap();
        assert_eq!(tr.samples.len(), 3_900);
        let h = touch_histogram::<f64>(&tr.samples, PageSize::DEFAULT, None, false);
        assert_eq!(h.pages[0], 3_900);
        assert_eq!(h.access_shares[0], 1.0);
    }

    #[test]
    fn constant_gap_gives_constant_reuse() {
        let g = 3 * SEC;
        let spec = one(
            Pattern::TwoTouchGap {
                gap: GapDist::Constant { gap: g },
            },
            1_000 * PAGE,
            200.0,
        );
        let tr = generate(&spec).unwrap();
        let filter = ReuseFilter {
            tier: Tier::Dram,
            object: None,
            include_stores: false,
        };
        let gaps = two_touch_gaps(&tr.samples, PageSize::DEFAULT, filter);
        assert_eq!(gaps.len(), 1_000);
        assert!(gaps.iter().all(|&x| x == g));
        let st = reuse_stats::<f64>(&tr.samples, PageSize::DEFAULT, filter).unwrap();
        assert_eq!(st.min, 3.0);
        assert_eq!(st.max, 3.0);
    }

    #[test]
    fn weights_must_sum_to_one() {
        let mut spec = one(Pattern::UniformRandom, 100 * PAGE, 10.0);
        spec.objects[0].weight = 0.9;
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn spec_json_accepts_suffixes() {
        let text = r#"{
            "name": "x", "duration": "5s", "sample_rate": 100, "threads": 2,
            "external_fraction": 0.5,
            "objects": [
                {"size": "4MB", "pattern": {"kind": "single_touch_sweep"}, "weight": 0.5},
                {"size": 8192000, "weight": 0.5, "start": "1s",
                 "pattern": {"kind": "two_touch_gap", "gap": {"kind": "uniform", "min": "10ms", "max": "1s"}}}
            ]
        }"#;
        let spec = WorkloadSpec::from_json(text).unwrap();
        assert_eq!(spec.duration, 5 * SEC);
        assert_eq!(spec.objects[0].size, 4_000_000);
        assert_eq!(spec.objects[1].start, SEC);
        let back = WorkloadSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn table_fixture_counts() {
        let out = table_fixture(1);
        let ext = out.trace.samples.iter().filter(|s| s.is_external()).count();
        assert_eq!(out.trace.samples.len(), 20_000);
        assert_eq!(ext, 9_820);
    }

    #[test]
    fn presets_validate_and_map() {
        for name in ["uniform_cold", "cc_urand_like"] {
            let out = preset(name, 3).unwrap();
            let table = build_object_table(
                &out.trace.allocs,
                trace_end(&out.trace.allocs, &out.trace.samples),
            )
            .unwrap();
            let attr = table.attribute_all(&out.trace.samples);
            assert!(attr.iter().all(|a| a.is_some()), "{name}");
        }
    }

    #[test]
    fn traced_nvm_is_exact() {
        let n = (0..1_000).filter(|&p| traced_nvm(p, 0.7)).count();
        assert_eq!(n, 700);
    }

    fn arb_spec() -> impl Strategy<Value = WorkloadSpec> {
        let pattern = prop_oneof![
            Just(Pattern::SingleTouchSweep),
            Just(Pattern::UniformRandom),
            (1u64..3).prop_map(|g| Pattern::TwoTouchGap {
                gap: GapDist::Uniform {
                    min: 0,
                    max: g * SEC
                }
            }),
            (0.05f64..0.5, 0.0f64..1.0).prop_map(|(f, w)| Pattern::HotColdSkew {
                hot_fraction: f,
                hot_weight: w
            }),
        ];
        let object = (
            pattern,
            8u64..500,
            1u32..10,
            0u64..4,
            proptest::option::of(0u64..3),
        )
            .prop_map(|(p, pages, w, start, free)| ObjectSpec {
                start: start * SEC,
                end: Some(start * SEC + 5 * SEC),
                free_at: free.map(|f| start * SEC + 5 * SEC + f * SEC),
                ..obj(pages * PAGE, p, w as f64)
            });
        (
            proptest::collection::vec(object, 1..5),
            any::<u64>(),
            1u16..6,
            0.0f64..1.0,
        )
            .prop_map(|(mut objects, seed, threads, ext)| {
                let sum: f64 = objects.iter().map(|o| o.weight).sum();
                for o in &mut objects {
                    o.weight /= sum;
                }
                WorkloadSpec {
                    name: "p".into(),
                    seed,
                    duration: 12 * SEC,
                    sample_rate: 300.0,
                    threads,
                    external_fraction: ext,
                    tlb_miss_fraction: 0.3,
                    levels: LevelMode::Unknown,
                    latency_model: "cc_kron".into(),
                    latency_jitter: 0.2,
                    objects,
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn generated_traces_are_valid(spec in arb_spec()) {
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.samples.len() as u64, spec.total_samples());
            prop_assert!(a.samples.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
            prop_assert!(a.allocs.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
            let table = build_object_table(&a.allocs, trace_end(&a.allocs, &a.samples)).unwrap();
            let attr = table.attribute_all(&a.samples);
            prop_assert!(attr.iter().all(|x| x.is_some()));
        }

        #[test]
        fn partitions_tile(pages in 1u64..100_000, threads in 1u64..64) {
            prop_assume!(threads <= pages);
            let mut next = 0;
            for j in 0..threads {
                let (a, b) = thread_partition(pages, threads, j);
                prop_assert_eq!(a, next);
                prop_assert!(b > a);
                next = b;
            }
            prop_assert_eq!(next, pages);
        }
    }
}
