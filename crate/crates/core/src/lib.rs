//! Trace-driven toolkit for tiered (DRAM + NVM) memory studies.
//!
//! The pipeline ingests sampled memory accesses and `mmap`/`munmap` events,
//! attributes every sample to the memory object that was live at its address
//! and time, computes tier/touch/reuse metrics, simulates AutoNUMA-style page
//! promotion and demotion over the same trace, and builds object-level static
//! placement plans that can be compared against the simulated baseline.
//!
//! Floating-point metrics are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`. Density ranking is done
//! with exact integer ratios.

pub mod autonuma;
pub mod characterize;
pub mod config;
mod error;
pub mod ingest;
pub mod mapping;
pub mod placement;
pub mod report;
mod scalar;
pub mod stats;
pub mod synth;
pub mod trace;

pub use error::{Error, ErrorClass, Result};
pub use scalar::Scalar;

pub use config::{CostModel, RunConfig};
pub use mapping::{ObjectProfile, ObjectTable};
pub use placement::{Density, PlacementPlan};
pub use trace::{
    page_of, AllocKind, AllocationEvent, Level, MemorySample, Nanos, ObjectId, ObjectRecord, Op,
    PageSize, Tier, TlbOutcome,
};

/// Tier split and cost table in double precision.
pub type TierSplit = characterize::TierSplit<f64>;
/// Tier split in single precision.
pub type TierSplit32 = characterize::TierSplit<f32>;
/// Touch histogram in double precision.
pub type TouchHistogram = characterize::TouchHistogram<f64>;
/// Two-touch reuse statistics in seconds, double precision.
pub type ReuseStats = stats::ReuseStats<f64>;
/// Two-touch reuse statistics in seconds, single precision.
pub type ReuseStats32 = stats::ReuseStats<f32>;
/// Promotion pattern fractions in double precision.
pub type PromotionPatterns = characterize::PromotionPatterns<f64>;
/// Windowed promotion / DRAM-load correlation in double precision.
pub type PromotionCorrelation = characterize::PromotionCorrelation<f64>;
/// Static plan versus simulated baseline, double precision.
pub type ComparisonSummary = report::ComparisonSummary<f64>;
pub type ComparisonSummary32 = report::ComparisonSummary<f32>;

/// Trace file format version written by `--version` and into run manifests.
pub const TRACE_FORMAT_VERSION: u32 = 1;
