//! Lumped disturbances as smooth analytic time functions.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::scalar::{lit, Real};

/// One scalar channel. Every variant is C-infinity with a closed-form derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Waveform {
    Zero,
    Constant {
        value: f64,
    },
    /// `offset + amplitude * sin(omega t + phase)`
    Sin {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `offset + amplitude * cos(omega t + phase)`
    Cos {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
}

impl Waveform {
    pub fn sin(amplitude: f64, omega: f64) -> Self {
        Self::Sin { amplitude, omega, phase: 0.0, offset: 0.0 }
    }

    pub fn cos(amplitude: f64, omega: f64) -> Self {
        Self::Cos { amplitude, omega, phase: 0.0, offset: 0.0 }
    }

    pub fn value<T: Real>(&self, t: T) -> T {
        match *self {
            Self::Zero => T::zero(),
            Self::Constant { value } => lit(value),
            Self::Sin { amplitude, omega, phase, offset } => {
                lit::<T>(offset) + lit::<T>(amplitude) * (lit::<T>(omega) * t + lit(phase)).sin()
            }
            Self::Cos { amplitude, omega, phase, offset } => {
                lit::<T>(offset) + lit::<T>(amplitude) * (lit::<T>(omega) * t + lit(phase)).cos()
            }
        }
    }

    pub fn derivative<T: Real>(&self, t: T) -> T {
        match *self {
            Self::Zero | Self::Constant { .. } => T::zero(),
            Self::Sin { amplitude, omega, phase, .. } => {
                lit::<T>(amplitude * omega) * (lit::<T>(omega) * t + lit(phase)).cos()
            }
            Self::Cos { amplitude, omega, phase, .. } => {
                -lit::<T>(amplitude * omega) * (lit::<T>(omega) * t + lit(phase)).sin()
            }
        }
    }

    /// Upper bound on `|value|`.
    pub fn magnitude_bound(&self) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant { value } => value.abs(),
            Self::Sin { amplitude, offset, .. } | Self::Cos { amplitude, offset, .. } => {
                offset.abs() + amplitude.abs()
            }
        }
    }
}

pub type Channels = [Waveform; 3];

fn eval<T: Real>(ch: &Channels, t: T, d: bool) -> Vector3<T> {
    let f = |w: &Waveform| if d { w.derivative(t) } else { w.value(t) };
    Vector3::new(f(&ch[0]), f(&ch[1]), f(&ch[2]))
}

/// Rotational (`sigma_xi`, rad/s^2) and translational (`sigma_rho`, m/s^2)
/// lumped disturbances acting on the plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    #[serde(default)]
    pub description: String,
    pub sigma_xi: Channels,
    pub sigma_rho: Channels,
}

impl DisturbanceSpec {
    pub fn none() -> Self {
        Self {
            description: "none".into(),
            sigma_xi: [Waveform::Zero, Waveform::Zero, Waveform::Zero],
            sigma_rho: [Waveform::Zero, Waveform::Zero, Waveform::Zero],
        }
    }

    /// `sigma_xi = [sin t, cos t, sin t]`, `sigma_rho = [cos t, sin t, cos t]`.
    pub fn sinusoidal() -> Self {
        Self {
            description: "unit sinusoids".into(),
            sigma_xi: [Waveform::sin(1.0, 1.0), Waveform::cos(1.0, 1.0), Waveform::sin(1.0, 1.0)],
            sigma_rho: [Waveform::cos(1.0, 1.0), Waveform::sin(1.0, 1.0), Waveform::cos(1.0, 1.0)],
        }
    }

    pub fn sigma_xi<T: Real>(&self, t: T) -> Vector3<T> {
        eval(&self.sigma_xi, t, false)
    }

    pub fn sigma_rho<T: Real>(&self, t: T) -> Vector3<T> {
        eval(&self.sigma_rho, t, false)
    }

    pub fn sigma_xi_dot<T: Real>(&self, t: T) -> Vector3<T> {
        eval(&self.sigma_xi, t, true)
    }

    pub fn sigma_rho_dot<T: Real>(&self, t: T) -> Vector3<T> {
        eval(&self.sigma_rho, t, true)
    }
}
