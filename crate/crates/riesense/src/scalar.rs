//! Scalar abstraction for the geometry and autodiff kernels.
//!
//! The numerical core is generic over the floating-point type so the same
//! formulas can run in `f32` or `f64`. Everything above the kernels (model,
//! datasets, benchmark harness) pins [`Fp`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Shorthand for `FromPrimitive::from_f64` on literals known to fit.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Margin kept between produced points and the ball boundary.
pub fn ball_margin<F: Real>() -> F {
    F::of(1e-5)
}

/// Clamp bound for `atanh` arguments.
pub fn atanh_bound<F: Real>() -> F {
    F::one() - F::of(1e-12)
}

/// Denominators smaller than this are treated as degenerate.
pub fn degenerate_denom<F: Real>() -> F {
    F::of(1e-12)
}
