//! Scalar abstraction for the closed-form parts of the crate.
//!
//! The geometric kernel, the single-guide analysis and the focusing-time
//! algebra are written against [`Scalar`], so they can be evaluated in `f32`
//! as well as `f64`. Orbit integration is `f64` only.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating point type usable by the generic kernels.
pub trait Scalar: Float + FloatConst + FromPrimitive + Debug + Display + Send + Sync + 'static {
    /// Converts an `f64` literal (tolerances, small integers) into `Self`.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn two() -> Self {
        Self::one() + Self::one()
    }

    /// Converts a count into `Self`.
    fn count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
