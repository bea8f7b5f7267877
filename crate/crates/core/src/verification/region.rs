//! Level-set constants of the domain of operation and an empirical
//! invariance probe for the attitude error.

use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::lyapunov::{closed_form, lambda_max_power, LyapunovError};
use crate::control::{rotational_control, ControlGains};
use crate::disturbance::DisturbanceSpec;
use crate::integrate::rk4_step;
use crate::sim::SimError;
use crate::vehicle::{rotational_derivative, thrust_direction, VehicleParams, VehicleState};

/// Attitude references and thrusts over which the thrust-direction
/// Lipschitz constant is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingConditions {
    /// Largest roll/pitch reference magnitude (rad).
    pub max_reference_tilt: f64,
    /// Thrust range as multiples of `m g`.
    pub thrust_range: (f64, f64),
    /// Grid step for the attitude error and the references (rad).
    pub grid_step: f64,
}

impl Default for OperatingConditions {
    fn default() -> Self {
        Self { max_reference_tilt: 0.6, thrust_range: (0.5, 2.0), grid_step: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    pub value: f64,
    pub conditions: OperatingConditions,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRegion {
    pub p_xi: Matrix6<f64>,
    pub p_rho: Matrix6<f64>,
    pub c_xi: f64,
    /// Upper limit `c_xi` must stay below.
    pub c_xi_bound: f64,
    pub c_rho: f64,
    /// Lower limit `c_rho` must exceed.
    pub c_rho_bound: f64,
    pub delta: f64,
    pub lipschitz: LipschitzEstimate,
}

impl StabilityRegion {
    pub fn v_xi(&self, xi: &Vector6<f64>) -> f64 {
        xi.dot(&(self.p_xi * xi))
    }

    pub fn v_rho(&self, rho: &Vector6<f64>) -> f64 {
        rho.dot(&(self.p_rho * rho))
    }
}

/// Acceleration mismatch caused by flying attitude `theta_r + xi1` instead
/// of `theta_r` at thrust `u`.
pub fn thrust_direction_error(theta_r: &Vector3<f64>, xi1: &Vector3<f64>, u: f64, params: &VehicleParams<f64>) -> Vector3<f64> {
    (thrust_direction(&(theta_r + xi1)) - thrust_direction(theta_r)) * (-u / params.mass)
}

fn grid(half_width: f64, step: f64) -> Vec<f64> {
    let n = (half_width / step).round() as i64;
    (-n..=n).map(|k| k as f64 * step).collect()
}

/// Largest `|e(xi1)| / |xi1|` over a grid of attitude errors with
/// `|xi1| < delta` and roll/pitch references (five steps per side). The
/// ratio is linear in thrust, so only the largest thrust is evaluated.
pub fn lipschitz_estimate(params: &VehicleParams<f64>, delta: f64, cond: OperatingConditions) -> LipschitzEstimate {
    let xi_grid = grid(delta, cond.grid_step);
    let ref_step = cond.max_reference_tilt / 5.0;
    let refs = grid(cond.max_reference_tilt, ref_step.max(cond.grid_step));
    let u_max = cond.thrust_range.1 * params.mass * params.gravity;
    let mut best: f64 = 0.0;
    let mut samples = 0;
    for &rr in &refs {
        for &rp in &refs {
            let theta_r = Vector3::new(rr, rp, 0.0);
            for &a in &xi_grid {
                for &b in &xi_grid {
                    for &c in &xi_grid {
                        let xi1 = Vector3::new(a, b, c);
                        let n = xi1.norm();
                        if n == 0.0 || n >= delta {
                            continue;
                        }
                        samples += 1;
                        best = best.max(thrust_direction_error(&theta_r, &xi1, u_max, params).norm() / n);
                    }
                }
            }
        }
    }
    LipschitzEstimate { value: best, conditions: cond, samples }
}

/// Level-set constants for gains and attitude margin `delta`: `c_xi` at 0.9
/// of its bound and `c_rho` 10% above its lower limit.
pub fn domain_constants(
    gains: &ControlGains<f64>,
    params: &VehicleParams<f64>,
    delta: f64,
    cond: OperatingConditions,
) -> Result<StabilityRegion, LyapunovError> {
    assert!(delta > 0.0 && delta < std::f64::consts::FRAC_PI_2, "delta must lie in (0, pi/2)");
    let p_xi = closed_form(gains.beta1, gains.beta2)?;
    let p_rho = closed_form(gains.gamma1, gains.gamma2)?;
    let c_xi_bound = (gains.beta1 + 1.0) * delta * delta / (2.0 * gains.beta2);
    let lipschitz = lipschitz_estimate(params, delta, cond);
    let lam = lambda_max_power(&DMatrix::from_column_slice(6, 6, p_rho.as_slice()), 1e-14, 10_000);
    let c_rho_bound = lam * (2.0 * lipschitz.value * delta * lam).powi(2);
    Ok(StabilityRegion {
        p_xi,
        p_rho,
        c_xi: 0.9 * c_xi_bound,
        c_xi_bound,
        c_rho: 1.1 * c_rho_bound,
        c_rho_bound,
        delta,
        lipschitz,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub trajectories: usize,
    /// Trajectories on which `|xi1|` reached `delta`.
    pub violations: usize,
    /// Largest `|xi1| / delta` seen.
    pub worst_ratio: f64,
    pub max_initial_v: f64,
}

/// Uniform sample of `{xi : V(xi) < c}`.
pub fn sample_level_set(p: &Matrix6<f64>, c: f64, rng: &mut impl Rng) -> Vector6<f64> {
    let z = Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let u: f64 = rng.random();
    let scale = (c * u.powf(1.0 / 6.0).powi(2) / z.dot(&(p * z))).sqrt();
    z * scale
}

/// Starts `n` attitude-error states inside `V_xi < c_xi` around random
/// constant references and integrates the rotational plant under the exact
/// linearizing law with the scenario disturbance. Counts trajectories whose
/// attitude error reaches `delta`.
#[allow(clippy::too_many_arguments)]
pub fn invariance_probe(
    region: &StabilityRegion,
    gains: &ControlGains<f64>,
    params: &VehicleParams<f64>,
    disturbance: &DisturbanceSpec,
    n: usize,
    seed: u64,
    duration: f64,
    dt: f64,
) -> Result<InvarianceReport, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = InvarianceReport { trajectories: n, violations: 0, worst_ratio: 0.0, max_initial_v: 0.0 };
    let steps = (duration / dt).round() as usize;
    let tilt = 0.3;
    for _ in 0..n {
        let theta_r = Vector3::new(rng.random_range(-tilt..tilt), rng.random_range(-tilt..tilt), rng.random_range(-1.0..1.0));
        let xi0 = sample_level_set(&region.p_xi, region.c_xi, &mut rng);
        report.max_initial_v = report.max_initial_v.max(region.v_xi(&xi0));
        let mut x = DVector::from_iterator(6, xi0.iter().copied());
        let f = |t: f64, x: &DVector<f64>| -> Result<DVector<f64>, SimError> {
            let xi1 = Vector3::new(x[0], x[1], x[2]);
            let xi2 = Vector3::new(x[3], x[4], x[5]);
            let mut st = VehicleState::at_rest(Vector3::zeros(), params.n_rotors());
            st.theta1 = theta_r + xi1;
            st.theta2 = xi2;
            let sigma = disturbance.sigma_xi(t);
            let torque = rotational_control(&xi1, &xi2, &st.theta1, &Vector3::zeros(), &sigma, params, gains)?;
            let (d1, d2) = rotational_derivative(&st, &torque, &sigma, params)?;
            Ok(DVector::from_iterator(6, d1.iter().chain(d2.iter()).copied()))
        };
        let mut violated = false;
        let mut t = 0.0;
        for _ in 0..steps {
            x = rk4_step(f, &x, t, dt)?;
            t += dt;
            let ratio = Vector3::new(x[0], x[1], x[2]).norm() / region.delta;
            report.worst_ratio = report.worst_ratio.max(ratio);
            violated |= ratio >= 1.0;
        }
        report.violations += usize::from(violated);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_gains() -> ControlGains<f64> {
        ControlGains { beta1: 1.0, beta2: 1.0, gamma1: 1.0, gamma2: 1.0, ..ControlGains::default() }
    }

    #[test]
    fn c_xi_for_unit_gains() {
        let p = VehicleParams::hexrotor();
        let cond = OperatingConditions { grid_step: 0.05, ..OperatingConditions::default() };
        let r = domain_constants(&unit_gains(), &p, 0.2, cond).unwrap();
        assert!((r.c_xi_bound - 0.04).abs() < 1e-15);
        assert!((r.c_xi - 0.036).abs() < 1e-15);
        assert!(r.c_rho > r.c_rho_bound);
    }

    #[test]
    fn level_set_samples_stay_inside() {
        let p = closed_form(16.0, 8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = sample_level_set(&p, 0.5, &mut rng);
            assert!(x.dot(&(p * x)) < 0.5);
        }
    }

    #[test]
    fn small_errors_have_near_thrust_lipschitz_constant() {
        // For small tilt errors |R3(a) - R3(b)| ~ |a - b|, so the constant is
        // close to the largest thrust acceleration.
        let p = VehicleParams::hexrotor();
        let cond = OperatingConditions { grid_step: 0.02, max_reference_tilt: 0.0, thrust_range: (1.0, 1.0) };
        let l = lipschitz_estimate(&p, 0.1, cond);
        assert!(l.value <= p.gravity * 1.0000001);
        assert!(l.value > 0.95 * p.gravity);
    }
}
