//! Floating point abstraction shared by every solver in the crate.

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Real scalar the engine is generic over: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + NumAssign + Default + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Converts an `f64` literal into the scalar type.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in the scalar type")
    }

    /// Absolute stopping tolerance of the implicit fixed-point step, scaled by `max(1, |y|)`.
    fn fixed_point_tol() -> Self {
        Self::lit(1e-13).max(Self::epsilon() * Self::lit(4.0))
    }

    /// Relative tolerance used when checking that lattice prices recombine.
    fn recombination_tol(step: usize) -> Self {
        Self::epsilon() * Self::lit(32.0 * (step as f64 + 1.0))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Positive part `max(x, 0)`.
#[inline]
pub fn pos<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Negative part `max(-x, 0)`.
#[inline]
pub fn neg<T: Scalar>(x: T) -> T {
    if x < T::zero() {
        -x
    } else {
        T::zero()
    }
}
