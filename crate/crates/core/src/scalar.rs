//! Scalar abstraction shared by every geometric routine.
//!
//! All curve, segment and loss code is written against [`Scalar`] so that the
//! same source evaluates in `f32`, `f64`, or [`Dual`](crate::dual::Dual)
//! numbers for forward-mode gradients.

use std::fmt::Debug;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating point scalar usable throughout the crate.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    /// Value part as `f64` (drops derivative information for dual numbers).
    #[inline]
    fn value_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Debug
        + Send
        + Sync
        + 'static
{
}

/// Lifts a constant of one scalar type into another (e.g. `f64` data into a
/// dual number with zero derivative).
#[inline]
pub fn cast<S: Scalar, T: Scalar>(x: S) -> T {
    <T as num_traits::NumCast>::from(x).expect("scalar cast")
}
