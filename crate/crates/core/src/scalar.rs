//! Floating point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar usable by the matching pipeline: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant. Every finite `f64` is representable (possibly rounded) in `Self`.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable as scalar")
    }

    fn to_f64_lossless(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Tolerance used when comparing assignment totals for ties.
    fn tie_tolerance() -> Self {
        Self::epsilon() * Self::lit(1024.0)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
