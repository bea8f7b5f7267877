//! Scalar abstraction shared by every numeric module.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the dynamics, controllers and observer are generic over.
///
/// Implemented for `f32` and `f64`. The simulation engine converts to `f64`
/// only at its boundaries (logs, reports, noise draws).
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + std::fmt::Debug {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal or configuration value into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 is representable in every Real scalar")
}

/// Lossy conversion back to `f64` for logging.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
