//! Floating-point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the engine, tape and losses are generic over.
///
/// Production code runs on `f32`; `f64` is used by the finite-difference
/// oracles in the test suites.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline(always)]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).unwrap()
    }

    #[inline(always)]
    fn count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).unwrap()
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap()
    }

    #[inline(always)]
    fn as_f32(self) -> f32 {
        ToPrimitive::to_f32(&self).unwrap()
    }

    /// The slice viewed as `f32`, for kernels with a hand-vectorized `f32` path.
    #[inline(always)]
    fn f32_slice(_: &[Self]) -> Option<&[f32]> {
        None
    }

    #[inline(always)]
    fn f32_slice_mut(_: &mut [Self]) -> Option<&mut [f32]> {
        None
    }
}

impl Scalar for f32 {
    #[inline(always)]
    fn f32_slice(s: &[f32]) -> Option<&[f32]> {
        Some(s)
    }

    #[inline(always)]
    fn f32_slice_mut(s: &mut [f32]) -> Option<&mut [f32]> {
        Some(s)
    }
}

impl Scalar for f64 {}
