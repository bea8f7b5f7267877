//! Continuous-time plant models: multirotor rigid body in Z-Y-X Euler
//! angles, ESC lag, rotor mixer and the reference (ground vehicle) system.
//!
//! Axis convention is north-east-down: `z` grows downward and gravity is
//! `+g e_z`. Every function here is pure.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::scalar::{lit, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("Euler singularity: roll {roll:.6} / pitch {pitch:.6} rad outside the guarded range")]
    Singularity { roll: f64, pitch: f64 },
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
    #[error("reference driver undefined at t = {0}")]
    DriverUndefined(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Physical parameters of the multirotor.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleParams<T: Real> {
    pub inertia: Matrix3<T>,
    inertia_inv: Matrix3<T>,
    pub mass: T,
    pub gravity: T,
    /// Rotor thrust coefficient `b` (N s^2 / rad^2).
    pub thrust_coeff: T,
    /// Yaw-drag arm `c` appearing in the last mixer row.
    pub drag_coeff: T,
    pub arm_length: T,
    /// ESC first-order time constant (s).
    pub motor_time_constant: T,
    /// 4 x n map from squared rotor rates to `[u_f; tau] / b`.
    pub mixer: DMatrix<T>,
    pub omega_max: T,
    /// Distance kept from the +-pi/2 roll/pitch singularity (rad).
    pub euler_guard: T,
}

impl<T: Real> VehicleParams<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        inertia: Matrix3<T>,
        mass: T,
        gravity: T,
        thrust_coeff: T,
        drag_coeff: T,
        arm_length: T,
        motor_time_constant: T,
        mixer: DMatrix<T>,
        omega_max: T,
        euler_guard: T,
    ) -> Result<Self, DynamicsError> {
        let bad = |m: &str| Err(DynamicsError::InvalidParams(m.to_string()));
        if (inertia - inertia.transpose()).amax() > lit::<T>(1e-12) * inertia.amax() {
            return bad("inertia must be symmetric");
        }
        if inertia.clone().cholesky().is_none() {
            return bad("inertia must be positive definite");
        }
        if !(mass > T::zero()) || !(thrust_coeff > T::zero()) {
            return bad("mass and thrust coefficient must be positive");
        }
        if !(motor_time_constant > T::zero()) || !(omega_max > T::zero()) {
            return bad("motor time constant and omega_max must be positive");
        }
        if !(euler_guard > T::zero()) {
            return bad("euler guard must be positive");
        }
        if mixer.nrows() != 4 || ![4, 6, 8].contains(&mixer.ncols()) {
            return bad("mixer must be 4 x n with n in {4, 6, 8}");
        }
        let gram = &mixer * mixer.transpose();
        if gram.clone().cholesky().is_none() {
            return bad("mixer must have full row rank");
        }
        let inertia_inv = inertia.try_inverse().expect("positive definite");
        Ok(Self {
            inertia,
            inertia_inv,
            mass,
            gravity,
            thrust_coeff,
            drag_coeff,
            arm_length,
            motor_time_constant,
            mixer,
            omega_max,
            euler_guard,
        })
    }

    /// The 550 mm hexrotor used for the landing experiments.
    pub fn hexrotor() -> Self {
        let r = 0.275;
        let c = 0.1;
        Self::new(
            Matrix3::from_diagonal(&Vector3::new(lit(0.0228), lit(0.0241), lit(0.0446))),
            lit(1.824),
            lit(9.81),
            lit(1.8182e-5),
            lit(c),
            lit(r),
            lit(0.059),
            hexrotor_mixer(lit(r), lit(c)),
            lit(800.0),
            lit(1e-3),
        )
        .expect("hexrotor parameters are valid")
    }

    pub fn inertia_inv(&self) -> &Matrix3<T> {
        &self.inertia_inv
    }

    pub fn n_rotors(&self) -> usize {
        self.mixer.ncols()
    }

    /// Rotor rate at which every rotor carries an equal share of `m g`.
    pub fn hover_rotor_speed(&self) -> T {
        let row_sum = self.mixer.row(0).sum();
        (self.mass * self.gravity / (self.thrust_coeff * row_sum)).sqrt()
    }
}

/// X-geometry hexrotor mixer, rotors numbered clockwise from front-right.
pub fn hexrotor_mixer<T: Real>(r: T, c: T) -> DMatrix<T> {
    let h = r / lit(2.0);
    let s = r * lit::<T>(3.0).sqrt() / lit(2.0);
    let z = T::zero();
    let o = T::one();
    DMatrix::from_row_slice(
        4,
        6,
        &[
            o, o, o, o, o, o, //
            -h, -r, -h, h, r, h, //
            s, z, -s, -s, z, s, //
            c, -c, c, -c, c, -c,
        ],
    )
}

/// X-geometry mixer for `n` evenly spaced rotors with alternating spin.
pub fn x_frame_mixer<T: Real>(n: usize, r: T, c: T) -> DMatrix<T> {
    let mut m = DMatrix::zeros(4, n);
    for i in 0..n {
        let angle = T::pi() / lit(n as f64) + T::two_pi() * lit(i as f64) / lit(n as f64);
        m[(0, i)] = T::one();
        m[(1, i)] = -r * angle.sin();
        m[(2, i)] = r * angle.cos();
        m[(3, i)] = if i % 2 == 0 { c } else { -c };
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState<T: Real> {
    /// Euler angles `[roll, pitch, yaw]`.
    pub theta1: Vector3<T>,
    /// Euler angle rates.
    pub theta2: Vector3<T>,
    pub p1: Vector3<T>,
    pub p2: Vector3<T>,
    pub omega: DVector<T>,
}

impl<T: Real> VehicleState<T> {
    pub fn at_rest(p1: Vector3<T>, n_rotors: usize) -> Self {
        Self {
            theta1: Vector3::zeros(),
            theta2: Vector3::zeros(),
            p1,
            p2: Vector3::zeros(),
            omega: DVector::zeros(n_rotors),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceState<T: Real> {
    pub xc1: Vector3<T>,
    pub xc2: Vector3<T>,
}

/// Trigonometric cache for the Euler-rate map `theta2 = Psi * Omega`.
#[derive(Debug, Clone, Copy)]
pub struct EulerKinematics<T: Real> {
    sr: T,
    cr: T,
    sp: T,
    cp: T,
    tp: T,
}

impl<T: Real> EulerKinematics<T> {
    pub fn new(theta1: &Vector3<T>, guard: T) -> Result<Self, DynamicsError> {
        let limit = T::frac_pi_2() - guard;
        let (roll, pitch) = (theta1[0], theta1[1]);
        if !(roll.abs() < limit) || !(pitch.abs() < limit) {
            return Err(DynamicsError::Singularity {
                roll: crate::scalar::to_f64(roll),
                pitch: crate::scalar::to_f64(pitch),
            });
        }
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        Ok(Self { sr, cr, sp, cp, tp: sp / cp })
    }

    /// `Psi(theta1)`.
    pub fn matrix(&self) -> Matrix3<T> {
        let (sr, cr, cp, tp) = (self.sr, self.cr, self.cp, self.tp);
        let (z, o) = (T::zero(), T::one());
        Matrix3::new(
            o, sr * tp, cr * tp, //
            z, cr, -sr, //
            z, sr / cp, cr / cp,
        )
    }

    /// Closed-form `Psi^-1`.
    pub fn inverse(&self) -> Matrix3<T> {
        let (sr, cr, sp, cp) = (self.sr, self.cr, self.sp, self.cp);
        let (z, o) = (T::zero(), T::one());
        Matrix3::new(
            o, z, -sp, //
            z, cr, sr * cp, //
            z, -sr, cr * cp,
        )
    }

    /// `d/dt Psi` along Euler rates `theta2` (chain rule in roll and pitch).
    pub fn derivative(&self, theta2: &Vector3<T>) -> Matrix3<T> {
        let (sr, cr, sp, cp, tp) = (self.sr, self.cr, self.sp, self.cp, self.tp);
        let (droll, dpitch) = (theta2[0], theta2[1]);
        let sec2 = T::one() / (cp * cp);
        let z = T::zero();
        let d_roll = Matrix3::new(
            z, cr * tp, -sr * tp, //
            z, -sr, -cr, //
            z, cr / cp, -sr / cp,
        );
        let d_pitch = Matrix3::new(
            z, sr * sec2, cr * sec2, //
            z, z, z, //
            z, sr * sp * sec2, cr * sp * sec2,
        );
        d_roll * droll + d_pitch * dpitch
    }
}

/// `Psi(theta1)`, mapping body rates to Euler rates.
pub fn euler_rate_matrix<T: Real>(theta1: &Vector3<T>, guard: T) -> Result<Matrix3<T>, DynamicsError> {
    Ok(EulerKinematics::new(theta1, guard)?.matrix())
}

pub fn euler_rate_matrix_inv<T: Real>(
    theta1: &Vector3<T>,
    guard: T,
) -> Result<Matrix3<T>, DynamicsError> {
    Ok(EulerKinematics::new(theta1, guard)?.inverse())
}

pub fn euler_rate_matrix_dot<T: Real>(
    theta1: &Vector3<T>,
    theta2: &Vector3<T>,
    guard: T,
) -> Result<Matrix3<T>, DynamicsError> {
    Ok(EulerKinematics::new(theta1, guard)?.derivative(theta2))
}

/// Drift of the Euler-rate dynamics, `Psi_dot Psi^-1 theta2 - Psi J^-1 (Omega x J Omega)`.
pub fn rotational_drift<T: Real>(
    theta1: &Vector3<T>,
    theta2: &Vector3<T>,
    params: &VehicleParams<T>,
) -> Result<Vector3<T>, DynamicsError> {
    let kin = EulerKinematics::new(theta1, params.euler_guard)?;
    let body_rate = kin.inverse() * theta2;
    let gyro = body_rate.cross(&(params.inertia * body_rate));
    Ok(kin.derivative(theta2) * body_rate - kin.matrix() * (params.inertia_inv * gyro))
}

/// Input matrix `G(theta1) = Psi J^-1`.
pub fn rotational_input_matrix<T: Real>(
    theta1: &Vector3<T>,
    params: &VehicleParams<T>,
) -> Result<Matrix3<T>, DynamicsError> {
    Ok(euler_rate_matrix(theta1, params.euler_guard)? * params.inertia_inv)
}

/// Euler-angle form of `tau = J Omega_dot + Omega x J Omega` with a lumped
/// angular-acceleration disturbance.
pub fn rotational_derivative<T: Real>(
    state: &VehicleState<T>,
    torque: &Vector3<T>,
    sigma_xi: &Vector3<T>,
    params: &VehicleParams<T>,
) -> Result<(Vector3<T>, Vector3<T>), DynamicsError> {
    let kin = EulerKinematics::new(&state.theta1, params.euler_guard)?;
    let psi = kin.matrix();
    let body_rate = kin.inverse() * state.theta2;
    let gyro = body_rate.cross(&(params.inertia * body_rate));
    let theta2_dot = kin.derivative(&state.theta2) * body_rate
        + psi * (params.inertia_inv * (torque - gyro))
        + sigma_xi;
    Ok((state.theta2, theta2_dot))
}

/// Third column of the body-to-inertial rotation, `R e_z`.
pub fn thrust_direction<T: Real>(theta1: &Vector3<T>) -> Vector3<T> {
    let (sr, cr) = theta1[0].sin_cos();
    let (sp, cp) = theta1[1].sin_cos();
    let (sy, cy) = theta1[2].sin_cos();
    Vector3::new(cr * sp * cy + sr * sy, cr * sp * sy - sr * cy, cr * cp)
}

pub fn translational_derivative<T: Real>(
    state: &VehicleState<T>,
    u_f: T,
    sigma_rho: &Vector3<T>,
    params: &VehicleParams<T>,
) -> (Vector3<T>, Vector3<T>) {
    debug_assert!(u_f >= T::zero(), "total thrust must be non-negative");
    let accel = thrust_direction(&state.theta1) * (-u_f / params.mass)
        + Vector3::z() * params.gravity
        + sigma_rho;
    (state.p2, accel)
}

/// First-order ESC lag `tau_m omega_dot = omega_des - omega`.
pub fn actuator_derivative<T: Real>(omega: &DVector<T>, omega_des: &DVector<T>, tau_m: T) -> DVector<T> {
    (omega_des - omega) / tau_m
}

/// `[u_f; tau] = b M omega.^2`.
pub fn mixer_forward<T: Real>(omega: &DVector<T>, params: &VehicleParams<T>) -> (T, Vector3<T>) {
    let squared = omega.map(|w| w * w);
    mixer_forward_squared(&squared, params)
}

pub fn mixer_forward_squared<T: Real>(squared: &DVector<T>, params: &VehicleParams<T>) -> (T, Vector3<T>) {
    let wrench = &params.mixer * squared * params.thrust_coeff;
    (wrench[0], Vector3::new(wrench[1], wrench[2], wrench[3]))
}

/// Generator of the reference trajectory. The observer never sees it.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceDriver<T: Real> {
    /// Planar weave `x = v t, y = A cos(w t)`, constant altitude. Only the
    /// acceleration and jerk are used; the initial condition sets the offset.
    Weave { speed: T, amplitude: T, omega: T },
    /// First-order tracking of a commanded planar velocity (teleoperation).
    VelocityCommand { command: Vector2<T>, time_constant: T },
    ConstantVelocity,
}

impl<T: Real> ReferenceDriver<T> {
    /// Velocity of the scripted path at time `t`, used to start the
    /// reference state on the path.
    pub fn path_velocity(&self, t: T) -> Vector3<T> {
        match self {
            Self::Weave { speed, amplitude, omega } => {
                Vector3::new(*speed, -*amplitude * *omega * (*omega * t).sin(), T::zero())
            }
            _ => Vector3::zeros(),
        }
    }

    pub fn acceleration(&self, t: T, state: &ReferenceState<T>) -> Result<Vector3<T>, DynamicsError> {
        if !t.is_finite() || t < T::zero() {
            return Err(DynamicsError::DriverUndefined(crate::scalar::to_f64(t)));
        }
        Ok(match self {
            Self::Weave { amplitude, omega, .. } => {
                Vector3::new(T::zero(), -*amplitude * *omega * *omega * (*omega * t).cos(), T::zero())
            }
            Self::VelocityCommand { command, time_constant } => {
                let target = Vector3::new(command[0], command[1], T::zero());
                (target - state.xc2) / *time_constant
            }
            Self::ConstantVelocity => Vector3::zeros(),
        })
    }

    /// Time derivative of [`Self::acceleration`] along the driver's own flow.
    pub fn jerk(&self, t: T, state: &ReferenceState<T>) -> Result<Vector3<T>, DynamicsError> {
        Ok(match self {
            Self::Weave { amplitude, omega, .. } => Vector3::new(
                T::zero(),
                *amplitude * omega.powi(3) * (*omega * t).sin(),
                T::zero(),
            ),
            Self::VelocityCommand { time_constant, .. } => {
                -self.acceleration(t, state)? / *time_constant
            }
            Self::ConstantVelocity => Vector3::zeros(),
        })
    }
}

pub fn reference_derivative<T: Real>(
    state: &ReferenceState<T>,
    t: T,
    driver: &ReferenceDriver<T>,
) -> Result<(Vector3<T>, Vector3<T>), DynamicsError> {
    Ok((state.xc2, driver.acceleration(t, state)?))
}
