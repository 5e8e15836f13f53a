//! Run configuration and the external-access cost model.
//!
//! The configuration document is a JSON object. Every key is optional and
//! unknown keys are rejected. Byte quantities are integers or strings with a
//! decimal `KB`/`MB`/`GB`/`TB` suffix (`"35MB"` is 35 000 000 bytes);
//! durations are integer nanoseconds or strings with an `ns`/`us`/`ms`/`s`
//! suffix.
//!
//! ```json
//! {
//!   "page_size": 4096,
//!   "dram_capacity": "192MB",
//!   "nvm_capacity": "768MB",
//!   "reserved_dram": "92MB",
//!   "scan_period": "1s",
//!   "scan_batch": 64,
//!   "promote_rate_limit": "35MB",
//!   "threshold_init": "1s",
//!   "threshold_min": "10ms",
//!   "threshold_max": "10s",
//!   "threshold_adjust_window": "1s",
//!   "watermark_high": 0.98,
//!   "watermark_low": 0.95,
//!   "include_stores": false,
//!   "cost_model": "bc_kron",
//!   "rng_seed": 0
//! }
//! ```
//!
//! `cost_model` is either a named row of the built-in table (see
//! [`CostModel::preset`]) or an object with any of `dram_tlb_hit`,
//! `dram_tlb_miss`, `nvm_tlb_hit`, `nvm_tlb_miss`, `migrate_page_cost`.
//! `promote_rate_limit` additionally accepts the preset names
//! `"default_35MB"` and `"max_8GBps"`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::trace::{Nanos, PageSize, Tier, TlbOutcome, NANOS_PER_SEC};
use crate::{Error, Result};

/// Cycles charged per external access by (tier, TLB outcome), plus the cost
/// of migrating one page.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub dram_tlb_hit: u64,
    pub dram_tlb_miss: u64,
    pub nvm_tlb_hit: u64,
    pub nvm_tlb_miss: u64,
    pub migrate_page_cost: u64,
}

/// Measured average external-access costs in cycles, per workload:
/// (name, DRAM/TLB-hit, DRAM/TLB-miss, NVM/TLB-hit, NVM/TLB-miss).
pub const MEASURED_COSTS: [(&str, [u64; 4]); 6] = [
    ("bc_kron", [659, 772, 1833, 2727]),
    ("bc_urand", [1675, 1617, 2862, 3439]),
    ("bfs_kron", [404, 490, 1572, 2218]),
    ("bfs_urand", [578, 734, 2632, 4183]),
    ("cc_kron", [315, 866, 1170, 2975]),
    ("cc_urand", [325, 903, 1345, 4141]),
];

impl CostModel {
    pub const DEFAULT_MIGRATE_PAGE_COST: u64 = 20_000;

    /// A row of [`MEASURED_COSTS`] with the default migration cost.
    pub fn preset(name: &str) -> Option<CostModel> {
        MEASURED_COSTS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, c)| CostModel::from_table(*c))
    }

    pub fn from_table(c: [u64; 4]) -> CostModel {
        CostModel {
            dram_tlb_hit: c[0],
            dram_tlb_miss: c[1],
            nvm_tlb_hit: c[2],
            nvm_tlb_miss: c[3],
            migrate_page_cost: Self::DEFAULT_MIGRATE_PAGE_COST,
        }
    }

    /// Cycles for one external access. An unknown TLB outcome is charged the
    /// mean of the hit and miss entries, rounded down.
    pub fn cycles(&self, tier: Tier, tlb: TlbOutcome) -> u64 {
        let (hit, miss) = match tier {
            Tier::Dram => (self.dram_tlb_hit, self.dram_tlb_miss),
            Tier::Nvm => (self.nvm_tlb_hit, self.nvm_tlb_miss),
        };
        match tlb {
            TlbOutcome::Hit => hit,
            TlbOutcome::Miss => miss,
            TlbOutcome::Unknown => (hit + miss) / 2,
        }
    }

    fn validate(&self, errs: &mut Vec<String>) {
        for (k, v) in [
            ("cost_model.dram_tlb_hit", self.dram_tlb_hit),
            ("cost_model.dram_tlb_miss", self.dram_tlb_miss),
            ("cost_model.nvm_tlb_hit", self.nvm_tlb_hit),
            ("cost_model.nvm_tlb_miss", self.nvm_tlb_miss),
            ("cost_model.migrate_page_cost", self.migrate_page_cost),
        ] {
            if v == 0 {
                errs.push(format!("{k} must be > 0"));
            }
        }
    }
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::preset("bc_kron").expect("built-in row")
    }
}

/// The two promotion rate limits in circulation for the tiering patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateLimitPreset {
    /// 35 MB/s, the administrator default.
    Default35MB,
    /// 65 536 Mbit/s (8 GiB/s).
    Max8GBps,
}

impl RateLimitPreset {
    pub fn bytes_per_sec(self) -> u64 {
        match self {
            RateLimitPreset::Default35MB => 35_000_000,
            RateLimitPreset::Max8GBps => 65_536 * 1024 * 1024 / 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RateLimitPreset::Default35MB => "default_35MB",
            RateLimitPreset::Max8GBps => "max_8GBps",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "default_35MB" => Some(RateLimitPreset::Default35MB),
            "max_8GBps" => Some(RateLimitPreset::Max8GBps),
            _ => None,
        }
    }
}

/// Fully resolved run configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub page_size: PageSize,
    pub dram_capacity: u64,
    pub nvm_capacity: u64,
    /// DRAM held back for the OS and page cache.
    pub reserved_dram: u64,
    pub scan_period: Nanos,
    /// Pages armed per scan tick.
    pub scan_batch: u64,
    /// Bytes per second.
    pub promote_rate_limit: u64,
    pub threshold_init: Nanos,
    pub threshold_min: Nanos,
    pub threshold_max: Nanos,
    pub threshold_adjust_window: Nanos,
    /// Fraction of usable DRAM above which kswapd starts demoting.
    pub watermark_high: f64,
    /// Fraction of usable DRAM kswapd demotes down to.
    pub watermark_low: f64,
    /// Count stores as external accesses.
    pub include_stores: bool,
    pub cost_model: CostModel,
    pub rng_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            page_size: PageSize::DEFAULT,
            dram_capacity: 192_000_000,
            nvm_capacity: 768_000_000,
            reserved_dram: 92_000_000,
            scan_period: NANOS_PER_SEC,
            scan_batch: 64,
            promote_rate_limit: RateLimitPreset::Default35MB.bytes_per_sec(),
            threshold_init: NANOS_PER_SEC,
            threshold_min: 10_000_000,
            threshold_max: 10 * NANOS_PER_SEC,
            threshold_adjust_window: NANOS_PER_SEC,
            watermark_high: 0.98,
            watermark_low: 0.95,
            include_stores: false,
            cost_model: CostModel::default(),
            rng_seed: 0,
        }
    }
}

impl RunConfig {
    /// DRAM available to the workload.
    pub fn usable_dram(&self) -> u64 {
        self.dram_capacity.saturating_sub(self.reserved_dram)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.dram_capacity == 0 {
            errs.push("dram_capacity must be > 0".to_owned());
        }
        if self.reserved_dram >= self.dram_capacity {
            errs.push(format!(
                "reserved_dram ({}) must be below dram_capacity ({})",
                self.reserved_dram, self.dram_capacity
            ));
        }
        if self.scan_period == 0 {
            errs.push("scan_period must be > 0".to_owned());
        }
        if self.scan_batch == 0 {
            errs.push("scan_batch must be > 0".to_owned());
        }
        if self.threshold_adjust_window == 0 {
            errs.push("threshold_adjust_window must be > 0".to_owned());
        }
        if self.threshold_min == 0 {
            errs.push("threshold_min must be > 0".to_owned());
        }
        if !(self.threshold_min <= self.threshold_init && self.threshold_init <= self.threshold_max)
        {
            errs.push(format!(
                "threshold_min ({}) <= threshold_init ({}) <= threshold_max ({}) does not hold",
                self.threshold_min, self.threshold_init, self.threshold_max
            ));
        }
        let wm_ok = self.watermark_low > 0.0
            && self.watermark_low <= self.watermark_high
            && self.watermark_high <= 1.0;
        if !wm_ok {
            errs.push(format!(
                "watermarks must satisfy 0 < watermark_low ({}) <= watermark_high ({}) <= 1",
                self.watermark_low, self.watermark_high
            ));
        }
        self.cost_model.validate(&mut errs);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }

    /// Parses a configuration document, filling defaults.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let raw: RawConfig = if text.trim().is_empty() {
            RawConfig::default()
        } else {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        raw.resolve()
    }

    /// Pretty JSON of the resolved configuration (plain integers, no suffixes).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Bytes promoted per `window` at the configured rate limit.
    pub fn rate_limit_bytes_per(&self, window: Nanos) -> u64 {
        ((self.promote_rate_limit as u128 * window as u128) / NANOS_PER_SEC as u128) as u64
    }
}

/// Reads and resolves a configuration file; an empty file yields defaults.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    RunConfig::from_json(&text)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Quantity {
    Int(u64),
    Text(String),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CostSpec {
    Named(String),
    Table(RawCost),
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    dram_tlb_hit: Option<u64>,
    dram_tlb_miss: Option<u64>,
    nvm_tlb_hit: Option<u64>,
    nvm_tlb_miss: Option<u64>,
    migrate_page_cost: Option<u64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    page_size: Option<Quantity>,
    dram_capacity: Option<Quantity>,
    nvm_capacity: Option<Quantity>,
    reserved_dram: Option<Quantity>,
    scan_period: Option<Quantity>,
    scan_batch: Option<u64>,
    promote_rate_limit: Option<Quantity>,
    threshold_init: Option<Quantity>,
    threshold_min: Option<Quantity>,
    threshold_max: Option<Quantity>,
    threshold_adjust_window: Option<Quantity>,
    watermark_high: Option<f64>,
    watermark_low: Option<f64>,
    include_stores: Option<bool>,
    cost_model: Option<CostSpec>,
    rng_seed: Option<u64>,
}

impl RawConfig {
    fn resolve(self) -> Result<RunConfig> {
        let d = RunConfig::default();
        let mut errs = Vec::new();

        let mut bytes = |key: &str, q: Option<Quantity>, default: u64| -> u64 {
            match q {
                None => default,
                Some(Quantity::Int(v)) => v,
                Some(Quantity::Text(s)) => parse_bytes(&s).unwrap_or_else(|e| {
                    errs.push(format!("{key}: {e}"));
                    default
                }),
            }
        };
        let page_size_raw = bytes("page_size", self.page_size, d.page_size.bytes());
        let dram_capacity = bytes("dram_capacity", self.dram_capacity, d.dram_capacity);
        let nvm_capacity = bytes("nvm_capacity", self.nvm_capacity, d.nvm_capacity);
        let reserved_dram = bytes("reserved_dram", self.reserved_dram, d.reserved_dram);
        let promote_rate_limit = match self.promote_rate_limit {
            Some(Quantity::Text(s)) if RateLimitPreset::from_name(&s).is_some() => {
                RateLimitPreset::from_name(&s).unwrap().bytes_per_sec()
            }
            other => bytes("promote_rate_limit", other, d.promote_rate_limit),
        };

        let mut dur = |key: &str, q: Option<Quantity>, default: Nanos| -> Nanos {
            match q {
                None => default,
                Some(Quantity::Int(v)) => v,
                Some(Quantity::Text(s)) => parse_duration(&s).unwrap_or_else(|e| {
                    errs.push(format!("{key}: {e}"));
                    default
                }),
            }
        };
        let scan_period = dur("scan_period", self.scan_period, d.scan_period);
        let threshold_init = dur("threshold_init", self.threshold_init, d.threshold_init);
        let threshold_min = dur("threshold_min", self.threshold_min, d.threshold_min);
        let threshold_max = dur("threshold_max", self.threshold_max, d.threshold_max);
        let threshold_adjust_window = dur(
            "threshold_adjust_window",
            self.threshold_adjust_window,
            d.threshold_adjust_window,
        );

        let cost_model = match self.cost_model {
            None => d.cost_model,
            Some(CostSpec::Named(name)) => CostModel::preset(&name).unwrap_or_else(|| {
                errs.push(format!("cost_model: unknown preset {name:?}"));
                d.cost_model
            }),
            Some(CostSpec::Table(t)) => {
                let b = d.cost_model;
                CostModel {
                    dram_tlb_hit: t.dram_tlb_hit.unwrap_or(b.dram_tlb_hit),
                    dram_tlb_miss: t.dram_tlb_miss.unwrap_or(b.dram_tlb_miss),
                    nvm_tlb_hit: t.nvm_tlb_hit.unwrap_or(b.nvm_tlb_hit),
                    nvm_tlb_miss: t.nvm_tlb_miss.unwrap_or(b.nvm_tlb_miss),
                    migrate_page_cost: t.migrate_page_cost.unwrap_or(b.migrate_page_cost),
                }
            }
        };

        let page_size = match PageSize::new(page_size_raw) {
            Ok(p) => p,
            Err(_) => {
                errs.push(format!(
                    "page_size must be a non-zero power of two, got {page_size_raw}"
                ));
                d.page_size
            }
        };

        let cfg = RunConfig {
            page_size,
            dram_capacity,
            nvm_capacity,
            reserved_dram,
            scan_period,
            scan_batch: self.scan_batch.unwrap_or(d.scan_batch),
            promote_rate_limit,
            threshold_init,
            threshold_min,
            threshold_max,
            threshold_adjust_window,
            watermark_high: self.watermark_high.unwrap_or(d.watermark_high),
            watermark_low: self.watermark_low.unwrap_or(d.watermark_low),
            include_stores: self.include_stores.unwrap_or(d.include_stores),
            cost_model,
            rng_seed: self.rng_seed.unwrap_or(d.rng_seed),
        };
        if let Err(Error::Config(msg)) = cfg.validate() {
            errs.push(msg);
        }
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }
}

/// Serde helper: a byte count given as an integer or a suffixed string.
pub(crate) fn de_bytes<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<u64, D::Error> {
    match Quantity::deserialize(d)? {
        Quantity::Int(v) => Ok(v),
        Quantity::Text(s) => parse_bytes(&s).map_err(serde::de::Error::custom),
    }
}

/// Serde helper: a duration given as integer nanoseconds or a suffixed string.
pub(crate) fn de_duration<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<Nanos, D::Error> {
    match Quantity::deserialize(d)? {
        Quantity::Int(v) => Ok(v),
        Quantity::Text(s) => parse_duration(&s).map_err(serde::de::Error::custom),
    }
}

pub(crate) fn de_opt_duration<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<Option<Nanos>, D::Error> {
    de_duration(d).map(Some)
}

/// Parses `"35MB"`, `"8 GB"`, `"4096"`, `"12B"`. Suffixes are decimal.
pub fn parse_bytes(s: &str) -> std::result::Result<u64, String> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n: u64 = num
        .parse()
        .map_err(|_| format!("invalid byte quantity {s:?}"))?;
    let mult: u64 = match unit.trim().to_ascii_uppercase().as_str() {
        "" | "B" => 1,
        "KB" => 1_000,
        "MB" => 1_000_000,
        "GB" => 1_000_000_000,
        "TB" => 1_000_000_000_000,
        other => return Err(format!("unknown byte suffix {other:?} in {s:?}")),
    };
    n.checked_mul(mult)
        .ok_or_else(|| format!("byte quantity {s:?} overflows"))
}

/// Parses `"1s"`, `"10ms"`, `"250us"`, `"7ns"` or a bare nanosecond count.
pub fn parse_duration(s: &str) -> std::result::Result<Nanos, String> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n: u64 = num.parse().map_err(|_| format!("invalid duration {s:?}"))?;
    let mult: u64 = match unit.trim() {
        "" | "ns" => 1,
        "us" => 1_000,
        "ms" => 1_000_000,
        "s" => NANOS_PER_SEC,
        other => return Err(format!("unknown duration suffix {other:?} in {s:?}")),
    };
    n.checked_mul(mult)
        .ok_or_else(|| format!("duration {s:?} overflows"))
}
