//! Output-feedback control of a multirotor with an extended high-gain
//! observer: plant models, controllers, observer, scenario engine and
//! numerical verification tools.
//!
//! Numeric modules are generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`.

pub mod ablation;
pub mod control;
pub mod disturbance;
pub mod integrate;
pub mod linalg;
pub mod log;
pub mod noise;
pub mod observer;
pub mod scalar;
pub mod scenario;
pub mod sim;
pub mod teleop;
pub mod vehicle;
pub mod verification;

pub use scalar::Real;

pub type VehicleParams = vehicle::VehicleParams<f64>;
pub type VehicleState = vehicle::VehicleState<f64>;
pub type ReferenceState = vehicle::ReferenceState<f64>;
pub type ControlGains = control::ControlGains<f64>;
pub type ControlOutput = control::ControlOutput<f64>;
pub type ObserverGains = observer::ObserverGains<f64>;
pub type ObserverState = observer::ObserverState<f64>;
