//! Order statistics and moments, generic over the float type.

use crate::Scalar;

/// Nearest-rank percentile of an ascending slice: the element at rank
/// `ceil(pct / 100 * n)` (1-based), with rank clamped to at least 1.
/// `pct` is an integer percentage in `0..=100`.
pub fn nearest_rank<T: Copy>(sorted: &[T], pct: u32) -> Option<T> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len() as u64;
    let rank = ((pct.min(100) as u64 * n).div_ceil(100)).max(1);
    Some(sorted[(rank - 1) as usize])
}

pub fn mean<F: Scalar>(xs: &[F]) -> Option<F> {
    if xs.is_empty() {
        return None;
    }
    let sum = xs.iter().fold(F::zero(), |a, &x| a + x);
    Some(sum / <F as Scalar>::from_u64(xs.len() as u64))
}

/// Population standard deviation (divides by `n`).
pub fn population_stddev<F: Scalar>(xs: &[F]) -> Option<F> {
    let m = mean(xs)?;
    let ss = xs.iter().fold(F::zero(), |a, &x| a + (x - m) * (x - m));
    Some((ss / <F as Scalar>::from_u64(xs.len() as u64)).sqrt())
}

/// Pearson correlation; `None` with fewer than two points or when either
/// series is constant.
pub fn pearson<F: Scalar>(xs: &[F], ys: &[F]) -> Option<F> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let mx = mean(xs)?;
    let my = mean(ys)?;
    let (mut sxy, mut sxx, mut syy) = (F::zero(), F::zero(), F::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == F::zero() || syy == F::zero() {
        return None;
    }
    Some(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Summary of a gap population (seconds).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReuseStats<F> {
    pub count: usize,
    pub min: F,
    pub max: F,
    pub mean: F,
    /// Population standard deviation.
    pub stddev: F,
    pub p25: F,
    pub p50: F,
    pub p75: F,
}

impl<F: Scalar> ReuseStats<F> {
    /// `None` for an empty population. NaNs are not expected.
    pub fn from_values(values: &[F]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN gaps"));
        Some(ReuseStats {
            count: sorted.len(),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            mean: mean(&sorted)?,
            stddev: population_stddev(&sorted)?,
            p25: nearest_rank(&sorted, 25)?,
            p50: nearest_rank(&sorted, 50)?,
            p75: nearest_rank(&sorted, 75)?,
        })
    }
}
