use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar used by the metric types: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an unsigned count.
    fn from_u64(v: u64) -> Self {
        <Self as FromPrimitive>::from_u64(v).unwrap_or_else(Self::nan)
    }

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `num / den`, or `None` when the denominator is zero.
pub(crate) fn ratio<F: Scalar>(num: u64, den: u64) -> Option<F> {
    (den != 0).then(|| <F as Scalar>::from_u64(num) / <F as Scalar>::from_u64(den))
}

/// Same as [`ratio`] for 128-bit sums (cycle totals).
pub(crate) fn ratio_u128<F: Scalar>(num: u128, den: u128) -> Option<F> {
    if den == 0 {
        return None;
    }
    let n = <F as FromPrimitive>::from_u128(num)?;
    let d = <F as FromPrimitive>::from_u128(den)?;
    Some(n / d)
}
