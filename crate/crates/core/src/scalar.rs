//! Scalar abstractions.
//!
//! The numeric kernels (frame conversion, contact force, line fitting, the
//! Ambegaokar-Baratoff relation) are written against these traits so they can
//! run in `f32`, `f64`, or an exact rational type. The stateful simulator is
//! concrete over `f64`; see the aliases at the crate root.

use std::fmt::Debug;

use num_traits::{FloatConst, FromPrimitive, Num, Signed};

/// Ordered field: enough for exact arithmetic kernels (no square roots).
pub trait Field: Clone + Debug + PartialOrd + Num + Signed + FromPrimitive {}

impl<T> Field for T where T: Clone + Debug + PartialOrd + Num + Signed + FromPrimitive {}

/// Floating point: f32 or f64
pub trait Real:
    Field + Copy + num_traits::Float + FloatConst + std::fmt::Display + Default + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into `T`.
///
/// Panics only if `T` cannot represent a finite `f64`, which none of the
/// supported scalar types do.
#[inline]
pub fn lit<T: FromPrimitive>(value: f64) -> T {
    T::from_f64(value).expect("scalar type cannot represent a finite f64 literal")
}
