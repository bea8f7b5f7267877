//! Scenario description: everything needed to reproduce a run bit for bit.
//! Mirrors the JSON scenario files field for field; unknown keys are rejected.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::control::{ControlGains, ThrustEnvelope};
use crate::disturbance::{DisturbanceSpec, Waveform};
use crate::observer::{Chi, ObserverError, ObserverGains, Slot};
use crate::scalar::{lit, Real};
use crate::vehicle::{hexrotor_mixer, x_frame_mixer, ReferenceDriver, VehicleParams};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("unknown override path `{0}`")]
    UnknownField(String),
    #[error("override `{0}` must have the form key=value")]
    BadOverride(String),
    #[error("scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("observer: {0}")]
    Observer(#[from] ObserverError),
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Quad,
    Hex,
    Octo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleConfig {
    pub inertia: [[f64; 3]; 3],
    pub mass: f64,
    pub gravity: f64,
    pub thrust_coeff: f64,
    pub drag_coeff: f64,
    pub arm_length: f64,
    pub motor_time_constant: f64,
    pub frame: Frame,
    /// Explicit 4 x n mixer rows; overrides `frame` geometry when present.
    #[serde(default)]
    pub mixer: Option<Vec<Vec<f64>>>,
    pub omega_max: f64,
    pub euler_guard: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self {
            inertia: [[0.0228, 0.0, 0.0], [0.0, 0.0241, 0.0], [0.0, 0.0, 0.0446]],
            mass: 1.824,
            gravity: 9.81,
            thrust_coeff: 1.8182e-5,
            drag_coeff: 0.1,
            arm_length: 0.275,
            motor_time_constant: 0.059,
            frame: Frame::Hex,
            mixer: None,
            omega_max: 800.0,
            euler_guard: 1e-3,
        }
    }
}

impl VehicleConfig {
    pub fn build<T: Real>(&self) -> Result<VehicleParams<T>, ScenarioError> {
        let positive = [
            ("vehicle.mass", self.mass),
            ("vehicle.gravity", self.gravity),
            ("vehicle.thrust_coeff", self.thrust_coeff),
            ("vehicle.arm_length", self.arm_length),
            ("vehicle.motor_time_constant", self.motor_time_constant),
            ("vehicle.omega_max", self.omega_max),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid(name, "must be positive"));
        }
        let r: T = lit(self.arm_length);
        let c: T = lit(self.drag_coeff);
        let mixer = match &self.mixer {
            Some(rows) => {
                let n = rows.first().map_or(0, Vec::len);
                if rows.len() != 4 || rows.iter().any(|row| row.len() != n) {
                    return Err(invalid("vehicle.mixer", "must be 4 rows of equal length"));
                }
                DMatrix::from_fn(4, n, |i, j| lit(rows[i][j]))
            }
            None => match self.frame {
                Frame::Hex => hexrotor_mixer(r, c),
                Frame::Quad => x_frame_mixer(4, r, c),
                Frame::Octo => x_frame_mixer(8, r, c),
            },
        };
        let j = Matrix3::from_fn(|i, k| lit(self.inertia[i][k]));
        VehicleParams::new(
            j,
            lit(self.mass),
            lit(self.gravity),
            lit(self.thrust_coeff),
            c,
            r,
            lit(self.motor_time_constant),
            mixer,
            lit(self.omega_max),
            lit(self.euler_guard),
        )
        .map_err(|e| invalid("vehicle", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// `null` disables the `tanh` bound on the position error.
    pub delta_rho: Option<f64>,
    pub landing_radius: f64,
    pub approach_offset: f64,
    pub landing_speed: f64,
    /// Seconds after start before the approach offset may be removed; keeps
    /// the initial (zero) estimates from triggering the latch.
    #[serde(default = "default_latch_delay")]
    pub offset_latch_delay: f64,
    /// Smallest upward virtual force (m/s^2) in output feedback.
    #[serde(default = "default_min_lift")]
    pub min_lift: f64,
    /// Largest thrust tilt (rad) in output feedback.
    #[serde(default = "default_max_tilt")]
    pub max_tilt: f64,
}

fn default_min_lift() -> f64 {
    ThrustEnvelope::<f64>::default().min_lift
}

fn default_max_tilt() -> f64 {
    ThrustEnvelope::<f64>::default().max_tilt
}

fn default_latch_delay() -> f64 {
    1.0
}

impl Default for GainsConfig {
    fn default() -> Self {
        let g = ControlGains::<f64>::default();
        Self {
            beta1: g.beta1,
            beta2: g.beta2,
            gamma1: g.gamma1,
            gamma2: g.gamma2,
            delta_rho: g.delta_rho,
            landing_radius: g.landing_radius,
            approach_offset: g.approach_offset,
            landing_speed: g.landing_speed,
            offset_latch_delay: default_latch_delay(),
            min_lift: g.envelope.min_lift,
            max_tilt: g.envelope.max_tilt,
        }
    }
}

impl GainsConfig {
    pub fn build<T: Real>(&self) -> Result<ControlGains<T>, ScenarioError> {
        let g = ControlGains {
            beta1: lit(self.beta1),
            beta2: lit(self.beta2),
            gamma1: lit(self.gamma1),
            gamma2: lit(self.gamma2),
            delta_rho: self.delta_rho.map(lit),
            landing_radius: lit(self.landing_radius),
            approach_offset: lit(self.approach_offset),
            landing_speed: lit(self.landing_speed),
            envelope: ThrustEnvelope { min_lift: lit(self.min_lift), max_tilt: lit(self.max_tilt) },
        };
        g.validate().map_err(|m| invalid("gains", m))?;
        if !(self.offset_latch_delay >= 0.0) {
            return Err(invalid("gains.offset_latch_delay", "must be >= 0"));
        }
        Ok(g)
    }
}

/// Per-slot saturation limits. Missing slots are filled automatically from a
/// state-feedback rehearsal of the scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationBounds {
    #[serde(default)]
    pub rho1: Option<[f64; 3]>,
    #[serde(default)]
    pub rho2: Option<[f64; 3]>,
    #[serde(default)]
    pub sigma_rho: Option<[f64; 3]>,
    #[serde(default)]
    pub xi1: Option<[f64; 3]>,
    #[serde(default)]
    pub xi2: Option<[f64; 3]>,
    #[serde(default)]
    pub varsigma: Option<[f64; 3]>,
    #[serde(default)]
    pub xc1: Option<[f64; 3]>,
    #[serde(default)]
    pub xc2: Option<[f64; 3]>,
    #[serde(default)]
    pub xc3: Option<[f64; 3]>,
    #[serde(default)]
    pub sigma_xc: Option<[f64; 3]>,
}

impl SaturationBounds {
    pub fn get(&self, s: Slot) -> Option<[f64; 3]> {
        match s {
            Slot::Rho1 => self.rho1,
            Slot::Rho2 => self.rho2,
            Slot::SigmaRho => self.sigma_rho,
            Slot::Xi1 => self.xi1,
            Slot::Xi2 => self.xi2,
            Slot::Varsigma => self.varsigma,
            Slot::Xc1 => self.xc1,
            Slot::Xc2 => self.xc2,
            Slot::Xc3 => self.xc3,
            Slot::SigmaXc => self.sigma_xc,
        }
    }

    pub fn set(&mut self, s: Slot, v: [f64; 3]) {
        let f = match s {
            Slot::Rho1 => &mut self.rho1,
            Slot::Rho2 => &mut self.rho2,
            Slot::SigmaRho => &mut self.sigma_rho,
            Slot::Xi1 => &mut self.xi1,
            Slot::Xi2 => &mut self.xi2,
            Slot::Varsigma => &mut self.varsigma,
            Slot::Xc1 => &mut self.xc1,
            Slot::Xc2 => &mut self.xc2,
            Slot::Xc3 => &mut self.xc3,
            Slot::SigmaXc => &mut self.sigma_xc,
        };
        *f = Some(v);
    }

    pub fn is_complete(&self) -> bool {
        Slot::ALL.iter().all(|s| self.get(*s).is_some())
    }

    /// Flattened 30-vector; panics if a slot is missing.
    pub fn to_chi<T: Real>(&self) -> Chi<T> {
        let mut chi = Chi::zeros();
        for s in Slot::ALL {
            let v = self.get(s).expect("saturation bounds resolved");
            for k in 0..3 {
                chi[s.offset() + k] = lit(v[k]);
            }
        }
        chi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationConfig {
    pub enabled: bool,
    #[serde(default)]
    pub bounds: SaturationBounds,
}

/// Source of the measured translational error fed to the observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rho1Source {
    /// Measured position minus the observer's reference-position estimate.
    ReferenceEstimate,
    /// Measured position minus measured reference position.
    ReferenceMeasurement,
    /// True error without noise (diagnostic).
    Oracle,
}

/// How the attitude reference is held between controller updates when
/// forming the measured rotational error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceHold {
    /// Piecewise constant.
    ZeroOrder,
    /// Extrapolated with the estimated reference rate.
    FirstOrder,
    /// Recomputed from the current estimates at the observer's own rate.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotorEstimateInit {
    Zero,
    MatchPlant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    pub epsilon: f64,
    /// Custom coefficient ladders per block (`null` = binomial).
    #[serde(default)]
    pub alpha: [Option<Vec<f64>>; 3],
    pub saturation: SaturationConfig,
    pub include_actuator_dynamics: bool,
    pub rho1_source: Rho1Source,
    pub reference_hold: ReferenceHold,
    pub initial_rotor_estimate: RotorEstimateInit,
}

/// Coefficients of `(s + a)^n`, highest power dropped.
pub fn shifted_binomial_alpha(n: usize, a: f64) -> Vec<f64> {
    let mut c = 1.0;
    (1..=n)
        .map(|j| {
            c = c * (n + 1 - j) as f64 / j as f64;
            c * a.powi(j as i32)
        })
        .collect()
}

impl Default for ObserverConfig {
    /// The position and reference blocks use slower ladders than the
    /// rotational block (poles at `-0.5/eps` and `-0.1/eps`); with binomial
    /// ladders measurement noise in those blocks reaches the attitude loop
    /// through the attitude reference.
    fn default() -> Self {
        Self {
            epsilon: 0.02,
            alpha: [Some(shifted_binomial_alpha(3, 0.5)), None, Some(shifted_binomial_alpha(4, 0.1))],
            saturation: SaturationConfig { enabled: true, bounds: SaturationBounds::default() },
            include_actuator_dynamics: true,
            rho1_source: Rho1Source::ReferenceEstimate,
            reference_hold: ReferenceHold::Continuous,
            initial_rotor_estimate: RotorEstimateInit::Zero,
        }
    }
}

impl ObserverConfig {
    /// Gains with the given (fully resolved) bounds.
    pub fn build<T: Real>(&self, bounds: Option<&SaturationBounds>) -> Result<ObserverGains<T>, ScenarioError> {
        let sat = match (self.saturation.enabled, bounds) {
            (true, Some(b)) => Some(b.to_chi()),
            (true, None) => return Err(invalid("observer.saturation.bounds", "unresolved")),
            (false, _) => None,
        };
        Ok(ObserverGains::new(self.epsilon, self.alpha.clone(), sat)?)
    }
}

/// Gaussian measurement noise standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Multirotor position (m).
    pub position: f64,
    /// Euler angles (rad).
    pub attitude: f64,
    /// Reference position (m).
    pub reference_position: f64,
}

impl NoiseConfig {
    pub fn off() -> Self {
        Self { position: 0.0, attitude: 0.0, reference_position: 0.0 }
    }

    pub fn is_off(&self) -> bool {
        self.position == 0.0 && self.attitude == 0.0 && self.reference_position == 0.0
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { position: 0.002, attitude: 0.2f64.to_radians(), reference_position: 0.005 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotorInit {
    /// Every rotor at the hover rate.
    Hover,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConditions {
    pub p1: [f64; 3],
    pub p2: [f64; 3],
    pub theta1: [f64; 3],
    pub theta2: [f64; 3],
    pub xc1: [f64; 3],
    pub xc2: [f64; 3],
    pub rotors: RotorInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceConfig {
    Weave { speed: f64, amplitude: f64, omega: f64 },
    VelocityCommand { time_constant: f64, command: [f64; 2] },
    ConstantVelocity,
}

impl ReferenceConfig {
    pub fn build<T: Real>(&self) -> Result<ReferenceDriver<T>, ScenarioError> {
        Ok(match *self {
            Self::Weave { speed, amplitude, omega } => {
                ReferenceDriver::Weave { speed: lit(speed), amplitude: lit(amplitude), omega: lit(omega) }
            }
            Self::VelocityCommand { time_constant, command } => {
                if !(time_constant > 0.0) {
                    return Err(invalid("reference.time_constant", "must be positive"));
                }
                ReferenceDriver::VelocityCommand {
                    command: Vector2::new(lit(command[0]), lit(command[1])),
                    time_constant: lit(time_constant),
                }
            }
            Self::ConstantVelocity => ReferenceDriver::ConstantVelocity,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub dt_plant: f64,
    /// Controller update rate (Hz); `null` evaluates the controller
    /// continuously inside the integrator.
    pub controller_rate: Option<f64>,
    pub duration: f64,
    /// Logging rate (Hz); must divide the plant rate.
    pub log_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// Observer estimates drive the controller.
    OutputFeedback,
    /// True states and disturbances drive the controller; ideal actuators.
    StateFeedback,
}

/// Box the plant must stay in for the run to count as well behaved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatingBox {
    pub max_tilt: f64,
    pub max_body_rate: f64,
    pub max_speed: f64,
}

impl Default for OperatingBox {
    fn default() -> Self {
        Self { max_tilt: 1.2, max_body_rate: 10.0, max_speed: 15.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub vehicle: VehicleConfig,
    pub gains: GainsConfig,
    pub observer: ObserverConfig,
    pub disturbances: DisturbanceSpec,
    pub noise: NoiseConfig,
    pub initial: InitialConditions,
    pub reference: ReferenceConfig,
    pub timing: TimingConfig,
    pub seed: u64,
    pub mode: FeedbackMode,
    pub stop_on_landing: bool,
    #[serde(default)]
    pub operating_box: OperatingBox,
}

impl Scenario {
    /// Chase and land on a weaving ground vehicle under sinusoidal
    /// disturbances and measurement noise.
    pub fn landing() -> Self {
        Self {
            name: "landing_sim".into(),
            vehicle: VehicleConfig::default(),
            gains: GainsConfig::default(),
            observer: ObserverConfig::default(),
            disturbances: DisturbanceSpec::sinusoidal(),
            noise: NoiseConfig::default(),
            initial: InitialConditions {
                p1: [-10.0, 1.0, -5.0],
                p2: [0.0; 3],
                theta1: [0.0; 3],
                theta2: [0.0; 3],
                xc1: [2.0, 0.0, -0.5],
                xc2: [1.0, 0.0, 0.0],
                rotors: RotorInit::Hover,
            },
            reference: ReferenceConfig::Weave { speed: 1.0, amplitude: 2.0, omega: 1.0 },
            timing: TimingConfig { dt_plant: 1e-4, controller_rate: Some(100.0), duration: 60.0, log_rate: 100.0 },
            seed: 1,
            mode: FeedbackMode::OutputFeedback,
            stop_on_landing: true,
            operating_box: OperatingBox::default(),
        }
    }

    /// Hover next to a parked ground vehicle with no disturbance; used for
    /// the actuator-model ablation.
    pub fn station_keeping() -> Self {
        let mut s = Self::landing();
        s.name = "station_keeping".into();
        s.disturbances = DisturbanceSpec::none();
        s.initial.p1 = [0.3, -0.2, -1.0];
        s.initial.xc1 = [0.0, 0.0, -0.5];
        s.initial.xc2 = [0.0; 3];
        s.reference = ReferenceConfig::ConstantVelocity;
        s.timing.duration = 10.0;
        s.stop_on_landing = false;
        s
    }

    /// Station keeping directly on the parked vehicle without measurement
    /// noise, for comparing observer variants.
    pub fn ablation() -> Self {
        let mut s = Self::station_keeping();
        s.name = "ablation".into();
        s.noise = NoiseConfig::off();
        s.gains.approach_offset = 0.0;
        s
    }

    /// Human-driven ground vehicle, parked until commanded.
    pub fn teleop() -> Self {
        let mut s = Self::landing();
        s.name = "teleop".into();
        s.initial.p1 = [-3.0, 1.0, -3.0];
        s.initial.xc1 = [0.0, 0.0, -0.5];
        s.initial.xc2 = [0.0; 3];
        s.reference = ReferenceConfig::VelocityCommand { time_constant: 0.3, command: [0.0, 0.0] };
        s.timing.duration = 600.0;
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Plant steps per controller update, or `None` for continuous control.
    pub fn controller_divisor(&self) -> Option<u64> {
        self.timing.controller_rate.map(|r| (1.0 / (r * self.timing.dt_plant)).round() as u64)
    }

    pub fn log_divisor(&self) -> u64 {
        ((1.0 / (self.timing.log_rate * self.timing.dt_plant)).round() as u64).max(1)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.vehicle.build::<f64>()?;
        self.gains.build::<f64>()?;
        self.reference.build::<f64>()?;
        let t = &self.timing;
        if !(t.dt_plant > 0.0) {
            return Err(invalid("timing.dt_plant", "must be positive"));
        }
        if !(t.duration > 0.0) {
            return Err(invalid("timing.duration", "must be positive"));
        }
        if self.mode == FeedbackMode::OutputFeedback && t.dt_plant > self.observer.epsilon / 10.0 * (1.0 + 1e-9) {
            return Err(invalid("timing.dt_plant", "must not exceed observer.epsilon / 10"));
        }
        let integer_multiple = |rate: f64| {
            let k = 1.0 / (rate * t.dt_plant);
            k >= 1.0 - 1e-9 && (k - k.round()).abs() < 1e-6
        };
        if let Some(r) = t.controller_rate {
            if !(r > 0.0) || !integer_multiple(r) {
                return Err(invalid("timing.controller_rate", "period must be an integer multiple of dt_plant"));
            }
        }
        if !(t.log_rate > 0.0) || !integer_multiple(t.log_rate) {
            return Err(invalid("timing.log_rate", "period must be an integer multiple of dt_plant"));
        }
        if self.observer.epsilon <= 0.0 {
            return Err(invalid("observer.epsilon", "must be positive"));
        }
        ObserverGains::<f64>::new(self.observer.epsilon, self.observer.alpha.clone(), None)?;
        for s in Slot::ALL {
            if let Some(b) = self.observer.saturation.bounds.get(s) {
                if b.iter().any(|k| !(*k > 0.0)) {
                    return Err(invalid(&format!("observer.saturation.bounds.{}", s.name()), "must be positive"));
                }
            }
        }
        let n = &self.noise;
        for (name, v) in [("noise.position", n.position), ("noise.attitude", n.attitude), ("noise.reference_position", n.reference_position)] {
            if !(v >= 0.0) {
                return Err(invalid(name, "must be non-negative"));
            }
        }
        let guard = std::f64::consts::FRAC_PI_2 - self.vehicle.euler_guard;
        if self.initial.theta1[0].abs() >= guard || self.initial.theta1[1].abs() >= guard {
            return Err(invalid("initial.theta1", "outside the Euler guard"));
        }
        let all_waves = self.disturbances.sigma_xi.iter().chain(self.disturbances.sigma_rho.iter());
        for w in all_waves {
            if let Waveform::Sin { omega, .. } | Waveform::Cos { omega, .. } = w {
                if !omega.is_finite() {
                    return Err(invalid("disturbances", "non-finite frequency"));
                }
            }
        }
        Ok(())
    }

    /// Applies `a.b.c=value` overrides. The path must already exist; the value
    /// is parsed as JSON, falling back to a string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ScenarioError> {
        let mut doc = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (path, raw) = o.split_once('=').ok_or_else(|| ScenarioError::BadOverride(o.into()))?;
            let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
            let mut node = &mut doc;
            for key in path.split('.') {
                node = match node {
                    Value::Object(map) => map.get_mut(key),
                    Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                    _ => None,
                }
                .ok_or_else(|| ScenarioError::UnknownField(path.into()))?;
            }
            *node = value;
        }
        let s: Self = serde_json::from_value(doc).map_err(|e| invalid("override", e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn initial_vec(v: [f64; 3]) -> Vector3<f64> {
        Vector3::from(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_ladders() {
        assert_eq!(shifted_binomial_alpha(3, 1.0), vec![3.0, 3.0, 1.0]);
        assert_eq!(shifted_binomial_alpha(4, 1.0), vec![4.0, 6.0, 4.0, 1.0]);
        let l = shifted_binomial_alpha(3, 0.5);
        assert_eq!(l, vec![1.5, 0.75, 0.125]);
    }

    #[test]
    fn defaults_validate() {
        Scenario::landing().validate().unwrap();
        Scenario::station_keeping().validate().unwrap();
        Scenario::teleop().validate().unwrap();
        assert_eq!(Scenario::landing().controller_divisor(), Some(100));
        assert_eq!(Scenario::landing().log_divisor(), 100);
    }

    #[test]
    fn json_round_trip() {
        let s = Scenario::landing();
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = serde_json::to_value(Scenario::landing()).unwrap();
        v["noise"]["bogus"] = Value::from(1.0);
        assert!(Scenario::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn overrides() {
        let s = Scenario::landing().with_overrides(&["noise.position=0", "seed=9", "initial.p1.2=-4"]).unwrap();
        assert_eq!(s.noise.position, 0.0);
        assert_eq!(s.seed, 9);
        assert_eq!(s.initial.p1[2], -4.0);
        assert!(matches!(
            Scenario::landing().with_overrides(&["noise.nope=1"]),
            Err(ScenarioError::UnknownField(_))
        ));
        assert!(matches!(Scenario::landing().with_overrides(&["seed"]), Err(ScenarioError::BadOverride(_))));
        let err = Scenario::landing().with_overrides(&["timing.dt_plant=0.01"]).unwrap_err();
        assert!(err.to_string().contains("timing.dt_plant"), "{err}");
        let s = Scenario::landing().with_overrides(&["timing.controller_rate=null"]).unwrap();
        assert_eq!(s.controller_divisor(), None);
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut s = Scenario::landing();
        s.gains.beta1 = -1.0;
        assert!(s.validate().unwrap_err().to_string().contains("beta1"));
        let mut s = Scenario::landing();
        s.timing.controller_rate = Some(300.0);
        assert!(s.validate().unwrap_err().to_string().contains("controller_rate"));
        let mut s = Scenario::landing();
        s.observer.alpha[0] = Some(vec![1.0, -2.0, 1.0]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn vehicle_frames_build() {
        for f in [Frame::Quad, Frame::Hex, Frame::Octo] {
            let cfg = VehicleConfig { frame: f, ..VehicleConfig::default() };
            let p = cfg.build::<f64>().unwrap();
            assert_eq!(p.n_rotors(), match f { Frame::Quad => 4, Frame::Hex => 6, Frame::Octo => 8 });
        }
        assert_eq!(VehicleConfig::default().build::<f64>().unwrap(), VehicleParams::hexrotor());
    }
}
