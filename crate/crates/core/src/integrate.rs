//! Fixed-step classical Runge-Kutta.

use nalgebra::DVector;

use crate::scalar::{lit, to_f64, Real};

/// Raised when a step produces NaN or infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonFiniteState {
    pub t: f64,
}

impl std::fmt::Display for NonFiniteState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "non-finite state after step at t = {}", self.t)
    }
}

impl std::error::Error for NonFiniteState {}

/// One RK4 step of `x' = f(t, x)`. Derivative errors propagate unchanged.
pub fn rk4_step<T, E, F>(mut f: F, x: &DVector<T>, t: T, dt: T) -> Result<DVector<T>, E>
where
    T: Real,
    E: From<NonFiniteState>,
    F: FnMut(T, &DVector<T>) -> Result<DVector<T>, E>,
{
    let half = dt * lit(0.5);
    let k1 = f(t, x)?;
    let k2 = f(t + half, &(x + &k1 * half))?;
    let k3 = f(t + half, &(x + &k2 * half))?;
    let k4 = f(t + dt, &(x + &k3 * dt))?;
    let next = x + (k1 + (k2 + k3) * lit::<T>(2.0) + k4) * (dt / lit(6.0));
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(NonFiniteState { t: to_f64(t + dt) }.into())
    }
}
