//! Extended high-gain observer over the translational error, rotational
//! error and reference chains, driven by simulated rotor speeds.
//!
//! Estimate layout (30 scalars): `rho1 rho2 sigma_rho | xi1 xi2 varsigma |
//! xc1 xc2 xc3 sigma_xc`, each a 3-vector.

use nalgebra::{DMatrix, DVector, SVector, Vector3};
use thiserror::Error;

use crate::scalar::{lit, Real};
use crate::vehicle::{
    actuator_derivative, rotational_drift, rotational_input_matrix, thrust_direction, DynamicsError, VehicleParams,
};

pub const N_EST: usize = 30;
pub type Chi<T> = SVector<T, N_EST>;

/// Chain lengths of the three observer blocks.
pub const BLOCK_ORDERS: [usize; 3] = [3, 3, 4];
const BLOCK_START: [usize; 3] = [0, 9, 18];

/// Named 3-vector slots in the estimate vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Rho1 = 0,
    Rho2 = 3,
    SigmaRho = 6,
    Xi1 = 9,
    Xi2 = 12,
    Varsigma = 15,
    Xc1 = 18,
    Xc2 = 21,
    Xc3 = 24,
    SigmaXc = 27,
}

impl Slot {
    pub const ALL: [Slot; 10] = [
        Slot::Rho1,
        Slot::Rho2,
        Slot::SigmaRho,
        Slot::Xi1,
        Slot::Xi2,
        Slot::Varsigma,
        Slot::Xc1,
        Slot::Xc2,
        Slot::Xc3,
        Slot::SigmaXc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Slot::Rho1 => "rho1",
            Slot::Rho2 => "rho2",
            Slot::SigmaRho => "sigma_rho",
            Slot::Xi1 => "xi1",
            Slot::Xi2 => "xi2",
            Slot::Varsigma => "varsigma",
            Slot::Xc1 => "xc1",
            Slot::Xc2 => "xc2",
            Slot::Xc3 => "xc3",
            Slot::SigmaXc => "sigma_xc",
        }
    }

    pub fn offset(self) -> usize {
        self as usize
    }
}

pub fn slot<T: Real>(chi: &Chi<T>, s: Slot) -> Vector3<T> {
    chi.fixed_rows::<3>(s.offset()).into_owned()
}

pub fn set_slot<T: Real>(chi: &mut Chi<T>, s: Slot, v: &Vector3<T>) {
    chi.fixed_rows_mut::<3>(s.offset()).copy_from(v);
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObserverError {
    #[error("observer polynomial with coefficients {0:?} is not Hurwitz")]
    NotHurwitz(Vec<f64>),
    #[error("unsupported block order {0}")]
    BadOrder(usize),
    #[error("epsilon must be positive")]
    BadEpsilon,
    #[error("saturation bound {0} must be positive")]
    BadBound(usize),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Coefficients of `(s + 1)^rho` below the leading one.
pub fn binomial_alpha(rho: usize) -> Vec<f64> {
    let mut c = vec![1.0; rho + 1];
    for k in 1..=rho {
        c[k] = c[k - 1] * (rho + 1 - k) as f64 / k as f64;
    }
    c[1..].to_vec()
}

/// Eigenvalues of the companion matrix of `s^n + a1 s^(n-1) + ... + an`,
/// empty if the decomposition does not converge.
pub fn companion_eigenvalues(alpha: &[f64]) -> Vec<nalgebra::Complex<f64>> {
    let n = alpha.len();
    let mut f = DMatrix::<f64>::zeros(n, n);
    for i in 0..n - 1 {
        f[(i, i + 1)] = 1.0;
    }
    for (j, a) in alpha.iter().enumerate() {
        f[(n - 1, n - 1 - j)] = -a;
    }
    crate::linalg::eigenvalues(&f).unwrap_or_default()
}

pub fn is_hurwitz(alpha: &[f64]) -> bool {
    !alpha.is_empty()
        && alpha.iter().all(|a| a.is_finite())
        && {
            let ev = companion_eigenvalues(alpha);
            !ev.is_empty() && ev.iter().all(|l| l.re < 0.0)
        }
}

/// Coefficient ladder and the diagonal entries `alpha_j / eps^j` of one `H` block.
pub fn make_gain_ladder(
    rho: usize,
    epsilon: f64,
    alpha: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>), ObserverError> {
    if !(3..=4).contains(&rho) {
        return Err(ObserverError::BadOrder(rho));
    }
    if !(epsilon > 0.0) {
        return Err(ObserverError::BadEpsilon);
    }
    let a = match alpha {
        Some(a) if a.len() == rho => a.to_vec(),
        Some(_) => return Err(ObserverError::BadOrder(rho)),
        None => binomial_alpha(rho),
    };
    if !is_hurwitz(&a) {
        return Err(ObserverError::NotHurwitz(a));
    }
    let h = a.iter().enumerate().map(|(j, aj)| aj / epsilon.powi(j as i32 + 1)).collect();
    Ok((a, h))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverGains<T: Real> {
    pub epsilon: T,
    pub alpha: [Vec<f64>; 3],
    /// Per-block `alpha_j / eps^j`.
    pub h: [Vec<T>; 3],
    /// Per-estimate saturation limits; `None` disables saturation.
    pub sat_bounds: Option<Chi<T>>,
}

impl<T: Real> ObserverGains<T> {
    pub fn new(epsilon: f64, alpha: [Option<Vec<f64>>; 3], sat_bounds: Option<Chi<T>>) -> Result<Self, ObserverError> {
        let mut alphas: [Vec<f64>; 3] = Default::default();
        let mut hs: [Vec<T>; 3] = Default::default();
        for i in 0..3 {
            let (a, h) = make_gain_ladder(BLOCK_ORDERS[i], epsilon, alpha[i].as_deref())?;
            alphas[i] = a;
            hs[i] = h.into_iter().map(lit).collect();
        }
        if let Some(b) = &sat_bounds {
            if let Some(i) = b.iter().position(|k| !(*k > T::zero())) {
                return Err(ObserverError::BadBound(i));
            }
        }
        Ok(Self { epsilon: lit(epsilon), alpha: alphas, h: hs, sat_bounds })
    }
}

/// Signals entering the observer at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverInputs<T: Real> {
    /// Measured position-level outputs of the three blocks.
    pub y_rho1: Vector3<T>,
    pub y_xi1: Vector3<T>,
    pub y_xc1: Vector3<T>,
    /// Measured attitude.
    pub theta1: Vector3<T>,
    pub theta_r_dot_est: Vector3<T>,
    /// Squared rotor rates driving the model (simulated or commanded).
    pub omega_s: DVector<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState<T: Real> {
    pub chi: Chi<T>,
    pub omega_hat: DVector<T>,
}

impl<T: Real> ObserverState<T> {
    /// All estimates zero except the reference position, which starts at its
    /// first measurement.
    pub fn initial(first_reference: Vector3<T>, n_rotors: usize) -> Self {
        let mut chi = Chi::zeros();
        set_slot(&mut chi, Slot::Xc1, &first_reference);
        Self { chi, omega_hat: DVector::zeros(n_rotors) }
    }
}

/// `chi_hat' = A chi_hat + B [f_bar + G_bar omega_s] + H (y - C chi_hat)`.
pub fn observer_derivative<T: Real>(
    chi: &Chi<T>,
    inp: &ObserverInputs<T>,
    params: &VehicleParams<T>,
    gains: &ObserverGains<T>,
) -> Result<Chi<T>, DynamicsError> {
    let wrench = &params.mixer * &inp.omega_s * params.thrust_coeff;
    let torque = Vector3::new(wrench[1], wrench[2], wrench[3]);

    let xi2 = slot(chi, Slot::Xi2);
    let rot_model = rotational_drift(&inp.theta1, &(xi2 + inp.theta_r_dot_est), params)?
        + rotational_input_matrix(&inp.theta1, params)? * torque;
    let trans_model = thrust_direction(&inp.theta1) * (-wrench[0] / params.mass) + Vector3::z() * params.gravity
        - slot(chi, Slot::Xc3);
    let models = [Some(trans_model), Some(rot_model), None];
    let outputs = [inp.y_rho1, inp.y_xi1, inp.y_xc1];

    let mut d = Chi::zeros();
    for b in 0..3 {
        let start = BLOCK_START[b];
        let order = BLOCK_ORDERS[b];
        let e = outputs[b] - chi.fixed_rows::<3>(start);
        for j in 0..order {
            let row = start + 3 * j;
            let mut v = e * gains.h[b][j];
            if j + 1 < order {
                v += chi.fixed_rows::<3>(row + 3);
            }
            if j == 1 {
                if let Some(m) = &models[b] {
                    v += m;
                }
            }
            d.fixed_rows_mut::<3>(row).copy_from(&v);
        }
    }
    Ok(d)
}

/// Elementwise `k sat(x / k)`; returns the saturated vector and how many
/// entries were clipped.
pub fn saturate_estimates<T: Real>(chi: &Chi<T>, bounds: &Chi<T>) -> (Chi<T>, usize) {
    let mut clipped = 0;
    let out = chi.zip_map(bounds, |x, k| {
        if x > k {
            clipped += 1;
            k
        } else if x < -k {
            clipped += 1;
            -k
        } else {
            x
        }
    });
    (out, clipped)
}

/// Per-slot saturation contact, for logging.
pub fn saturation_mask<T: Real>(chi: &Chi<T>, bounds: &Chi<T>) -> [bool; 10] {
    let mut mask = [false; 10];
    for (i, s) in Slot::ALL.iter().enumerate() {
        let o = s.offset();
        mask[i] = (0..3).any(|k| chi[o + k].abs() >= bounds[o + k]);
    }
    mask
}

/// One RK4 step of `tau_m w' = w_des - w` with no clamping.
pub fn simulated_actuator_step<T: Real>(omega_hat: &DVector<T>, omega_des: &DVector<T>, tau_m: T, dt: T) -> DVector<T> {
    let f = |w: &DVector<T>| actuator_derivative(w, omega_des, tau_m);
    let half = dt * lit(0.5);
    let k1 = f(omega_hat);
    let k2 = f(&(omega_hat + &k1 * half));
    let k3 = f(&(omega_hat + &k2 * half));
    let k4 = f(&(omega_hat + &k3 * dt));
    omega_hat + (k1 + (k2 + k3) * lit::<T>(2.0) + k4) * (dt / lit(6.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::mixer_forward;
    use approx::assert_relative_eq;

    fn gains(eps: f64) -> ObserverGains<f64> {
        ObserverGains::new(eps, [None, None, None], None).unwrap()
    }

    #[test]
    fn ladder_examples() {
        assert_eq!(binomial_alpha(3), vec![3.0, 3.0, 1.0]);
        assert_eq!(binomial_alpha(4), vec![4.0, 6.0, 4.0, 1.0]);
        let (_, h) = make_gain_ladder(3, 0.01, None).unwrap();
        assert_relative_eq!(h[0], 300.0, max_relative = 1e-12);
        assert_relative_eq!(h[1], 30000.0, max_relative = 1e-12);
        assert_relative_eq!(h[2], 1e6, max_relative = 1e-12);
        assert!(matches!(make_gain_ladder(3, 0.01, Some(&[1.0, -1.0, 1.0])), Err(ObserverError::NotHurwitz(_))));
        // s^3 + s^2 + s + 2: Routh fails (1*1 < 2).
        assert!(!is_hurwitz(&[1.0, 1.0, 2.0]));
        assert!(is_hurwitz(&[2.0, 2.0, 1.0]));
        assert!(make_gain_ladder(5, 0.01, None).is_err());
        assert!(make_gain_ladder(3, 0.0, None).is_err());
    }

    #[test]
    fn default_companion_roots_are_minus_one() {
        for rho in [3, 4] {
            for l in companion_eigenvalues(&binomial_alpha(rho)) {
                assert!(l.re < 0.0);
                assert!((l.re + 1.0).abs() < 1e-3 && l.im.abs() < 1e-3);
            }
        }
    }

    #[test]
    fn saturation_examples() {
        let k = Chi::from_element(2.0);
        let mut x = Chi::from_element(1.0);
        x[0] = 4.0;
        x[5] = -7.0;
        let (s, n) = saturate_estimates(&x, &k);
        assert_eq!(n, 2);
        assert_eq!(s[0], 2.0);
        assert_eq!(s[5], -2.0);
        assert_eq!(s[1], 1.0);
        let (s2, n2) = saturate_estimates(&s, &k);
        assert_eq!((s2, n2), (s, 0));
    }

    #[test]
    fn simulated_actuator_step_response() {
        let des = DVector::from_element(6, 100.0);
        let mut w = DVector::zeros(6);
        let dt = 1e-4;
        for _ in 0..590 {
            w = simulated_actuator_step(&w, &des, 0.059, dt);
        }
        assert!((w[0] / 100.0 - (1.0 - (-1f64).exp())).abs() < 5e-3);
        assert_eq!(simulated_actuator_step(&des, &des, 0.059, dt), des);
        // No clamping: negative targets pass through.
        let neg = DVector::from_element(6, -50.0);
        assert!(simulated_actuator_step(&w, &neg, 0.059, 0.01)[0] < w[0]);
    }

    struct Truth {
        chi: Chi<f64>,
        theta1: Vector3<f64>,
        rate_r: Vector3<f64>,
        omega: DVector<f64>,
        theta2: Vector3<f64>,
    }

    fn truth() -> Truth {
        let mut chi = Chi::zeros();
        let theta1 = Vector3::new(0.1, -0.05, 0.2);
        let rate_r = Vector3::new(0.05, 0.02, 0.0);
        let theta2 = Vector3::new(0.3, -0.1, 0.05);
        set_slot(&mut chi, Slot::Rho1, &Vector3::new(0.5, -0.3, 0.2));
        set_slot(&mut chi, Slot::Rho2, &Vector3::new(0.1, 0.2, -0.1));
        set_slot(&mut chi, Slot::SigmaRho, &Vector3::new(0.4, -0.2, 0.3));
        set_slot(&mut chi, Slot::Xi1, &Vector3::new(0.02, -0.01, 0.03));
        set_slot(&mut chi, Slot::Xi2, &(theta2 - rate_r));
        set_slot(&mut chi, Slot::Varsigma, &Vector3::new(0.5, 0.6, -0.7));
        set_slot(&mut chi, Slot::Xc1, &Vector3::new(2.0, 1.0, -0.5));
        set_slot(&mut chi, Slot::Xc2, &Vector3::new(1.0, 0.0, 0.0));
        set_slot(&mut chi, Slot::Xc3, &Vector3::new(0.0, -2.0, 0.0));
        set_slot(&mut chi, Slot::SigmaXc, &Vector3::new(0.0, 0.5, 0.0));
        let omega = DVector::from_vec(vec![390.0, 400.0, 410.0, 405.0, 395.0, 402.0]);
        Truth { chi, theta1, rate_r, omega, theta2 }
    }

    fn inputs(t: &Truth) -> ObserverInputs<f64> {
        ObserverInputs {
            y_rho1: slot(&t.chi, Slot::Rho1),
            y_xi1: slot(&t.chi, Slot::Xi1),
            y_xc1: slot(&t.chi, Slot::Xc1),
            theta1: t.theta1,
            theta_r_dot_est: t.rate_r,
            omega_s: t.omega.map(|w| w * w),
        }
    }

    /// With exact estimates the observer reproduces the true extended-state
    /// derivative computed from the plant equations.
    #[test]
    fn exact_estimates_follow_true_dynamics() {
        let p = VehicleParams::hexrotor();
        let t = truth();
        let d = observer_derivative(&t.chi, &inputs(&t), &p, &gains(0.01)).unwrap();

        let (u, tau) = mixer_forward(&t.omega, &p);
        let st = crate::vehicle::VehicleState {
            theta1: t.theta1,
            theta2: t.theta2,
            p1: Vector3::zeros(),
            p2: Vector3::zeros(),
            omega: t.omega.clone(),
        };
        let sig_rho = slot(&t.chi, Slot::SigmaRho);
        let varsigma = slot(&t.chi, Slot::Varsigma);
        let (_, p2dot) = crate::vehicle::translational_derivative(&st, u, &sig_rho, &p);
        // With xi2 = theta2 - theta_r', xi2' = theta2' - theta_r'' and the
        // lumped term equal to sigma_xi - theta_r''.
        let (_, th2dot) = crate::vehicle::rotational_derivative(&st, &tau, &varsigma, &p).unwrap();

        let expect = |s: Slot| -> Vector3<f64> {
            match s {
                Slot::Rho1 => slot(&t.chi, Slot::Rho2),
                Slot::Rho2 => p2dot - slot(&t.chi, Slot::Xc3),
                Slot::Xi1 => slot(&t.chi, Slot::Xi2),
                Slot::Xi2 => th2dot,
                Slot::Xc1 => slot(&t.chi, Slot::Xc2),
                Slot::Xc2 => slot(&t.chi, Slot::Xc3),
                Slot::Xc3 => slot(&t.chi, Slot::SigmaXc),
                _ => Vector3::zeros(),
            }
        };
        for s in Slot::ALL {
            assert!((slot(&d, s) - expect(s)).amax() < 1e-9, "{}", s.name());
        }
    }

    #[test]
    fn reference_block_ignores_rotor_input() {
        let p = VehicleParams::hexrotor();
        let t = truth();
        let g = gains(0.01);
        let mut inp = inputs(&t);
        let a = observer_derivative(&t.chi, &inp, &p, &g).unwrap();
        inp.omega_s *= 3.0;
        let b = observer_derivative(&t.chi, &inp, &p, &g).unwrap();
        for s in [Slot::Xc1, Slot::Xc2, Slot::Xc3, Slot::SigmaXc] {
            assert_eq!(slot(&a, s), slot(&b, s));
        }
        assert_ne!(slot(&a, Slot::Rho2), slot(&b, Slot::Rho2));
    }

    #[test]
    fn block_coupling_paths() {
        let p = VehicleParams::hexrotor();
        let t = truth();
        let g = gains(0.01);
        let base_inp = inputs(&t);
        let base = observer_derivative(&t.chi, &base_inp, &p, &g).unwrap();
        let blocks_changed = |d: &Chi<f64>| -> [bool; 3] {
            let diff = d - base;
            [diff.rows(0, 9).amax() > 0.0, diff.rows(9, 9).amax() > 0.0, diff.rows(18, 12).amax() > 0.0]
        };

        let mut inp = base_inp.clone();
        inp.y_xi1 += Vector3::new(0.01, 0.0, 0.0);
        assert_eq!(blocks_changed(&observer_derivative(&t.chi, &inp, &p, &g).unwrap()), [false, true, false]);

        let mut chi = t.chi;
        chi[Slot::Xi2.offset()] += 0.1;
        assert_eq!(blocks_changed(&observer_derivative(&chi, &base_inp, &p, &g).unwrap()), [false, true, false]);

        let mut chi = t.chi;
        chi[Slot::Xc3.offset() + 1] += 0.1;
        assert_eq!(blocks_changed(&observer_derivative(&chi, &base_inp, &p, &g).unwrap()), [true, false, true]);

        let mut inp = base_inp.clone();
        inp.y_rho1 += Vector3::new(0.01, 0.0, 0.0);
        assert_eq!(blocks_changed(&observer_derivative(&t.chi, &inp, &p, &g).unwrap()), [true, false, false]);
    }

    /// Reference block against the closed-form linear error solution
    /// `e(t) = exp((A - H C) t) e(0)` for a cubic reference (constant jerk).
    #[test]
    fn reference_block_matches_matrix_exponential() {
        let p = VehicleParams::hexrotor();
        let eps = 0.05;
        let g = gains(eps);
        let jerk = Vector3::new(0.3, -0.2, 0.1);
        let a0 = Vector3::new(0.0, 1.0, 0.0);
        let v0 = Vector3::new(1.0, 0.0, 0.0);
        let x0 = Vector3::new(2.0, 0.0, -0.5);
        let pos = |t: f64| x0 + v0 * t + a0 * (t * t / 2.0) + jerk * (t.powi(3) / 6.0);
        let t_truth = truth();
        let mut chi = Chi::zeros();
        set_slot(&mut chi, Slot::Xc1, &x0);
        let mut inp = inputs(&t_truth);
        let dt = 1e-4;
        let n = 2000;
        for k in 0..n {
            let t0 = k as f64 * dt;
            let mut f = |t: f64, c: &Chi<f64>| {
                inp.y_xc1 = pos(t);
                observer_derivative(c, &inp, &p, &g).unwrap()
            };
            let k1 = f(t0, &chi);
            let k2 = f(t0 + dt / 2.0, &(chi + k1 * (dt / 2.0)));
            let k3 = f(t0 + dt / 2.0, &(chi + k2 * (dt / 2.0)));
            let k4 = f(t0 + dt, &(chi + k3 * dt));
            chi += (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
        }
        let t_end = n as f64 * dt;

        // Per-axis 4x4 error system.
        let h: Vec<f64> = binomial_alpha(4).iter().enumerate().map(|(j, a)| a / eps.powi(j as i32 + 1)).collect();
        let mut m = DMatrix::<f64>::zeros(4, 4);
        for j in 0..3 {
            m[(j, j + 1)] = 1.0;
        }
        for j in 0..4 {
            m[(j, 0)] -= h[j];
        }
        let phi = (m * t_end).exp();
        for axis in 0..3 {
            let e0 = DVector::from_vec(vec![0.0, v0[axis], a0[axis], jerk[axis]]);
            let e = &phi * e0;
            let truth_now = [pos(t_end)[axis], v0[axis] + a0[axis] * t_end + jerk[axis] * t_end * t_end / 2.0, a0[axis] + jerk[axis] * t_end, jerk[axis]];
            for j in 0..4 {
                let est = chi[18 + 3 * j + axis];
                assert!((truth_now[j] - est - e[j]).abs() < 1e-6, "axis {axis} state {j}");
            }
        }
    }

    #[test]
    fn initial_state() {
        let s = ObserverState::initial(Vector3::new(2.0, 0.0, -0.5), 6);
        assert_eq!(slot(&s.chi, Slot::Xc1), Vector3::new(2.0, 0.0, -0.5));
        assert_eq!(s.chi.rows(0, 18).amax(), 0.0);
        assert_eq!(s.omega_hat, DVector::zeros(6));
    }
}
