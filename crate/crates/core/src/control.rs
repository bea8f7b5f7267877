//! Feedback-linearizing translational and rotational laws, attitude
//! reference extraction and minimum-norm rotor allocation.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::scalar::{lit, to_f64, Real};
use crate::vehicle::{rotational_drift, thrust_direction, DynamicsError, EulerKinematics, VehicleParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("infeasible thrust direction: virtual force z = {fz:.6} must be negative")]
    InfeasibleThrust { fz: f64 },
    #[error("virtual force has no x-z component; attitude reference undefined")]
    DegenerateDirection,
    #[error("mixer is rank deficient")]
    RankDeficient,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlGains<T: Real> {
    pub beta1: T,
    pub beta2: T,
    pub gamma1: T,
    pub gamma2: T,
    /// Radius of the `tanh` bound on the position error; `None` disables it.
    pub delta_rho: Option<T>,
    pub landing_radius: T,
    pub approach_offset: T,
    pub landing_speed: T,
    /// Limits applied to the virtual force in output feedback.
    pub envelope: ThrustEnvelope<T>,
}

/// Admissible virtual forces: at least `min_lift` upward and tilted at most
/// `max_tilt` from vertical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrustEnvelope<T: Real> {
    pub min_lift: T,
    pub max_tilt: T,
}

impl<T: Real> Default for ThrustEnvelope<T> {
    fn default() -> Self {
        Self { min_lift: lit(1.0), max_tilt: lit(0.6) }
    }
}

impl<T: Real> ThrustEnvelope<T> {
    /// Projects `force` into the envelope; returns which parts were
    /// changed as `(vertical, horizontal)`.
    pub fn apply(&self, force: &mut Vector3<T>) -> (bool, bool) {
        let vertical = force[2] > -self.min_lift;
        if vertical {
            force[2] = -self.min_lift;
        }
        let h = (force[0] * force[0] + force[1] * force[1]).sqrt();
        let h_max = -force[2] * self.max_tilt.tan();
        let horizontal = h > h_max;
        if horizontal {
            let k = h_max / h;
            force[0] *= k;
            force[1] *= k;
        }
        (vertical, horizontal)
    }
}

impl<T: Real> Default for ControlGains<T> {
    fn default() -> Self {
        Self {
            beta1: lit(16.0),
            beta2: lit(8.0),
            gamma1: lit(4.0),
            gamma2: lit(4.0),
            delta_rho: Some(lit(1.0)),
            landing_radius: lit(0.04),
            approach_offset: lit(0.5),
            landing_speed: lit(0.25),
            envelope: ThrustEnvelope::default(),
        }
    }
}

impl<T: Real> ControlGains<T> {
    pub fn validate(&self) -> Result<(), String> {
        let pos = [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("landing_radius", self.landing_radius),
            ("landing_speed", self.landing_speed),
            ("min_lift", self.envelope.min_lift),
            ("max_tilt", self.envelope.max_tilt),
        ];
        for (name, v) in pos {
            if !(v > T::zero()) {
                return Err(format!("gains.{name} must be positive"));
            }
        }
        if let Some(d) = self.delta_rho {
            if !(d > T::zero()) {
                return Err("gains.delta_rho must be positive".into());
            }
        }
        if !(self.approach_offset >= T::zero()) {
            return Err("gains.approach_offset must be non-negative".into());
        }
        if !(self.envelope.max_tilt < lit(std::f64::consts::FRAC_PI_2)) {
            return Err("gains.max_tilt must be below pi/2".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeCommand<T: Real> {
    pub theta_r: Vector3<T>,
    pub theta_r_dot_est: Vector3<T>,
    pub u_fd: T,
    /// Virtual force `f_t` the command was extracted from.
    pub force: Vector3<T>,
    /// The virtual force was projected into the thrust envelope.
    pub envelope_clamped: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AllocationFlags {
    pub negative_clamped: bool,
    pub omega_max_clamped: bool,
    pub envelope_clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput<T: Real> {
    pub torque_d: Vector3<T>,
    pub u_fd: T,
    pub omega_sd: DVector<T>,
    pub omega_des: DVector<T>,
    pub attitude_cmd: AttitudeCommand<T>,
    pub flags: AllocationFlags,
}

/// `f_t = -gamma1 rho1 - gamma2 rho2 - sigma_rho + p_r'' - g e_z`.
pub fn virtual_force<T: Real>(
    rho1: &Vector3<T>,
    rho2: &Vector3<T>,
    sigma_rho: &Vector3<T>,
    ref_accel: &Vector3<T>,
    params: &VehicleParams<T>,
    gains: &ControlGains<T>,
) -> Vector3<T> {
    -rho1 * gains.gamma1 - rho2 * gains.gamma2 - sigma_rho + ref_accel - Vector3::z() * params.gravity
}

/// Roll/pitch reference and thrust with `-(u/m) R3(theta_r) = f` and zero yaw.
///
/// Roll is `atan(f_y / sqrt(f_x^2 + f_z^2))`; this is the sign for which the
/// force is reproduced with the `R3` used by the plant.
pub fn attitude_from_force<T: Real>(
    force: &Vector3<T>,
    params: &VehicleParams<T>,
) -> Result<(Vector3<T>, T), ControlError> {
    let (fx, fy, fz) = (force[0], force[1], force[2]);
    if !(fz < T::zero()) {
        return Err(ControlError::InfeasibleThrust { fz: to_f64(fz) });
    }
    let horiz = (fx * fx + fz * fz).sqrt();
    let roll = (fy / horiz).atan();
    let pitch = (fx / fz).atan();
    let u = -params.mass * fz / (roll.cos() * pitch.cos());
    Ok((Vector3::new(roll, pitch, T::zero()), u))
}

/// Unbounded translational law: virtual force and the attitude/thrust
/// extracted from it. The rate field is left at zero.
pub fn translational_control<T: Real>(
    rho1: &Vector3<T>,
    rho2: &Vector3<T>,
    sigma_rho: &Vector3<T>,
    ref_accel: &Vector3<T>,
    params: &VehicleParams<T>,
    gains: &ControlGains<T>,
) -> Result<AttitudeCommand<T>, ControlError> {
    let force = virtual_force(rho1, rho2, sigma_rho, ref_accel, params, gains);
    let (theta_r, u_fd) = attitude_from_force(&force, params)?;
    Ok(AttitudeCommand { theta_r, theta_r_dot_est: Vector3::zeros(), u_fd, force, envelope_clamped: false })
}

/// `[phi_r', theta_r', 0]` from the virtual force and its time derivative.
pub fn attitude_reference_rate<T: Real>(
    force: &Vector3<T>,
    force_dot: &Vector3<T>,
) -> Result<Vector3<T>, ControlError> {
    let (fx, fy, fz) = (force[0], force[1], force[2]);
    let (dx, dy, dz) = (force_dot[0], force_dot[1], force_dot[2]);
    let h2 = fx * fx + fz * fz;
    if !(h2 >= lit(1e-12)) {
        return Err(ControlError::DegenerateDirection);
    }
    let h = h2.sqrt();
    let n2 = h2 + fy * fy;
    let roll_rate = (dy * h2 - fy * (dx * fx + dz * fz)) / (h * n2);
    let pitch_rate = (dx * fz - fx * dz) / h2;
    Ok(Vector3::new(roll_rate, pitch_rate, T::zero()))
}

/// Elementwise `delta tanh(x / delta)`.
pub fn bound_position_error<T: Real>(rho1: &Vector3<T>, delta_rho: T) -> Vector3<T> {
    rho1.map(|x| delta_rho * (x / delta_rho).tanh())
}

/// Everything the translational stage reads. In output feedback these are
/// saturated observer estimates; in state feedback, true signals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationalInputs<T: Real> {
    pub rho1: Vector3<T>,
    pub rho2: Vector3<T>,
    pub sigma_rho: Vector3<T>,
    /// Known disturbance rate; zero when only an estimate of `sigma_rho` exists.
    pub sigma_rho_dot: Vector3<T>,
    pub ref_accel: Vector3<T>,
    pub ref_jerk: Vector3<T>,
    pub theta1: Vector3<T>,
    /// Thrust currently acting on the body; `None` uses the new command.
    pub thrust: Option<T>,
    /// When set, the virtual force is projected into this envelope so an
    /// attitude can always be extracted; otherwise `f_z >= 0` is an error.
    pub envelope: Option<ThrustEnvelope<T>>,
}

/// Bounded translational law with analytic attitude-reference rate.
pub fn translational_stage<T: Real>(
    inp: &TranslationalInputs<T>,
    params: &VehicleParams<T>,
    gains: &ControlGains<T>,
) -> Result<AttitudeCommand<T>, ControlError> {
    let (rho1_b, rho1_b_rate) = match gains.delta_rho {
        Some(d) => {
            let sech2 = inp.rho1.map(|x| {
                let c = (x / d).cosh();
                T::one() / (c * c)
            });
            (bound_position_error(&inp.rho1, d), sech2.component_mul(&inp.rho2))
        }
        None => (inp.rho1, inp.rho2),
    };
    let mut force = virtual_force(&rho1_b, &inp.rho2, &inp.sigma_rho, &inp.ref_accel, params, gains);
    let (vertical, horizontal) = match &inp.envelope {
        Some(e) => e.apply(&mut force),
        None => (false, false),
    };
    let (theta_r, u_fd) = attitude_from_force(&force, params)?;
    let mut cmd = AttitudeCommand { theta_r, theta_r_dot_est: Vector3::zeros(), u_fd, force, envelope_clamped: vertical || horizontal };
    let thrust = inp.thrust.unwrap_or(cmd.u_fd);
    let rho2_rate = thrust_direction(&inp.theta1) * (-thrust / params.mass) + Vector3::z() * params.gravity
        + inp.sigma_rho
        - inp.ref_accel;
    let mut force_dot = -rho1_b_rate * gains.gamma1 - rho2_rate * gains.gamma2 - inp.sigma_rho_dot + inp.ref_jerk;
    if vertical {
        force_dot[2] = T::zero();
    }
    if horizontal {
        force_dot[0] = T::zero();
        force_dot[1] = T::zero();
    }
    cmd.theta_r_dot_est = attitude_reference_rate(&cmd.force, &force_dot)?;
    Ok(cmd)
}

/// `tau_d = G^-1 (theta1) [-beta1 xi1 - beta2 xi2 - varsigma - f(xi, theta1, theta_r')]`.
pub fn rotational_control<T: Real>(
    xi1: &Vector3<T>,
    xi2: &Vector3<T>,
    theta1: &Vector3<T>,
    theta_r_dot_est: &Vector3<T>,
    varsigma: &Vector3<T>,
    params: &VehicleParams<T>,
    gains: &ControlGains<T>,
) -> Result<Vector3<T>, ControlError> {
    let kin = EulerKinematics::new(theta1, params.euler_guard)?;
    let drift = rotational_drift(theta1, &(xi2 + theta_r_dot_est), params)?;
    let f_r = -xi1 * gains.beta1 - xi2 * gains.beta2 - varsigma;
    Ok(params.inertia * (kin.inverse() * (f_r - drift)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation<T: Real> {
    /// Minimum-norm squared rates before clamping.
    pub omega_sd_raw: DVector<T>,
    /// Squared rates with negative entries clamped to zero.
    pub omega_sd: DVector<T>,
    /// `sqrt(omega_sd)` clamped to `omega_max`.
    pub omega_des: DVector<T>,
    pub flags: AllocationFlags,
}

/// Minimum-energy allocation through `M^+ = M^T (M M^T)^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocator<T: Real> {
    pinv: DMatrix<T>,
    thrust_coeff: T,
    omega_max: T,
}

impl<T: Real> Allocator<T> {
    pub fn new(params: &VehicleParams<T>) -> Result<Self, ControlError> {
        let m = &params.mixer;
        let gram_inv = (m * m.transpose()).try_inverse().ok_or(ControlError::RankDeficient)?;
        Ok(Self {
            pinv: m.transpose() * gram_inv,
            thrust_coeff: params.thrust_coeff,
            omega_max: params.omega_max,
        })
    }

    pub fn pseudo_inverse(&self) -> &DMatrix<T> {
        &self.pinv
    }

    pub fn allocate(&self, u_fd: T, torque_d: &Vector3<T>) -> Allocation<T> {
        let wrench = DVector::from_vec(vec![u_fd, torque_d[0], torque_d[1], torque_d[2]]);
        let raw = &self.pinv * wrench / self.thrust_coeff;
        let mut flags = AllocationFlags::default();
        let clamped = raw.map(|w| {
            if w < T::zero() {
                flags.negative_clamped = true;
                T::zero()
            } else {
                w
            }
        });
        let omega_des = clamped.map(|w| {
            let s = w.sqrt();
            if s > self.omega_max {
                flags.omega_max_clamped = true;
                self.omega_max
            } else {
                s
            }
        });
        Allocation { omega_sd_raw: raw, omega_sd: clamped, omega_des, flags }
    }
}

/// One-shot allocation; builds the pseudo-inverse on every call.
pub fn allocate_rotors<T: Real>(
    u_fd: T,
    torque_d: &Vector3<T>,
    params: &VehicleParams<T>,
) -> Result<Allocation<T>, ControlError> {
    Ok(Allocator::new(params)?.allocate(u_fd, torque_d))
}

/// Rotational law plus allocation for an already computed attitude command.
#[allow(clippy::too_many_arguments)]
pub fn rotational_stage<T: Real>(
    xi1: &Vector3<T>,
    xi2: &Vector3<T>,
    varsigma: &Vector3<T>,
    theta1: &Vector3<T>,
    cmd: AttitudeCommand<T>,
    params: &VehicleParams<T>,
    gains: &ControlGains<T>,
    allocator: &Allocator<T>,
) -> Result<ControlOutput<T>, ControlError> {
    let torque_d = rotational_control(xi1, xi2, theta1, &cmd.theta_r_dot_est, varsigma, params, gains)?;
    let alloc = allocator.allocate(cmd.u_fd, &torque_d);
    Ok(ControlOutput {
        torque_d,
        u_fd: cmd.u_fd,
        omega_sd: alloc.omega_sd,
        omega_des: alloc.omega_des,
        attitude_cmd: cmd,
        flags: AllocationFlags { envelope_clamped: cmd.envelope_clamped, ..alloc.flags },
    })
}

/// Saturated estimates consumed by the output-feedback controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateView<T: Real> {
    pub rho1: Vector3<T>,
    pub rho2: Vector3<T>,
    pub sigma_rho: Vector3<T>,
    pub xi1: Vector3<T>,
    pub xi2: Vector3<T>,
    pub varsigma: Vector3<T>,
    pub xc3: Vector3<T>,
    pub sigma_xc: Vector3<T>,
}

/// Output-feedback law. `rho1` in `est` must already include the approach
/// offset; bounding happens here. `thrust` is the thrust the observer believes
/// is acting (from the simulated rotors).
pub fn output_feedback_step<T: Real>(
    est: &EstimateView<T>,
    theta1: &Vector3<T>,
    thrust: Option<T>,
    params: &VehicleParams<T>,
    gains: &ControlGains<T>,
    allocator: &Allocator<T>,
) -> Result<ControlOutput<T>, ControlError> {
    let inp = TranslationalInputs {
        rho1: est.rho1,
        rho2: est.rho2,
        sigma_rho: est.sigma_rho,
        sigma_rho_dot: Vector3::zeros(),
        ref_accel: est.xc3,
        ref_jerk: est.sigma_xc,
        theta1: *theta1,
        thrust,
        envelope: Some(gains.envelope),
    };
    let cmd = translational_stage(&inp, params, gains)?;
    rotational_stage(&est.xi1, &est.xi2, &est.varsigma, theta1, cmd, params, gains, allocator)
}
