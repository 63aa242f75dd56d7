//! Scalar abstraction: everything numeric in the crate is generic over [`Real`],
//! implemented for `f32` and `f64`. Concrete aliases live at the crate root.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless widening for accumulation.
    fn to_f64x(self) -> f64;
    /// Narrowing conversion from an `f64` intermediate.
    fn from_f64x(x: f64) -> Self;
    /// Approximate power-of-2 in the native width; see [`crate::quantize::ap2`].
    /// Specialized per type because it sits in per-parameter optimizer loops.
    fn ap2v(self) -> Self;

    fn from_usize_(n: usize) -> Self {
        Self::from_f64x(n as f64)
    }
    fn from_i64_(n: i64) -> Self {
        Self::from_f64x(n as f64)
    }
}

impl Real for f32 {
    #[inline(always)]
    fn to_f64x(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f64x(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn ap2v(self) -> Self {
        crate::quantize::ap2_f32(self)
    }
}

impl Real for f64 {
    #[inline(always)]
    fn to_f64x(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f64x(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn ap2v(self) -> Self {
        crate::quantize::ap2_f64(self)
    }
}

/// Round half away from zero. This is the single rounding rule used by every
/// quantizer in the crate.
#[inline(always)]
pub fn round_half_away(x: f64) -> f64 {
    // f64::round already rounds half away from zero.
    x.round()
}
