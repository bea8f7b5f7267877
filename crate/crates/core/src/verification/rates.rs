//! Finite-difference check of the analytic attitude-reference rate.

use nalgebra::Vector3;
use serde::Serialize;

use crate::control::{attitude_from_force, translational_stage, ControlError, ControlGains, TranslationalInputs};
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateConvergence {
    pub steps: Vec<f64>,
    /// Max over sample times of `|analytic - centered difference|` for roll
    /// and pitch rates, per step.
    pub errors: Vec<f64>,
    /// `log2` error ratios between consecutive halvings.
    pub orders: Vec<f64>,
}

impl RateConvergence {
    pub fn min_order(&self) -> f64 {
        self.orders.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// A smooth, dynamically consistent flight: position error, reference path
/// and the attitude and thrust that produce the error's acceleration.
fn flight(t: f64, params: &VehicleParams<f64>) -> Result<TranslationalInputs<f64>, ControlError> {
    let rho1 = Vector3::new(0.8 * (0.7 * t).sin(), 0.5 * (0.9 * t).cos(), 0.3 * (1.1 * t).sin());
    let rho2 = Vector3::new(0.56 * (0.7 * t).cos(), -0.45 * (0.9 * t).sin(), 0.33 * (1.1 * t).cos());
    let rho2_dot = Vector3::new(-0.392 * (0.7 * t).sin(), -0.405 * (0.9 * t).cos(), -0.363 * (1.1 * t).sin());
    let ref_accel = Vector3::new(0.0, -2.0 * t.cos(), 0.0);
    let ref_jerk = Vector3::new(0.0, 2.0 * t.sin(), 0.0);
    let force = rho2_dot + ref_accel - Vector3::z() * params.gravity;
    let (theta1, thrust) = attitude_from_force(&force, params)?;
    Ok(TranslationalInputs {
        rho1,
        rho2,
        sigma_rho: Vector3::zeros(),
        sigma_rho_dot: Vector3::zeros(),
        ref_accel,
        ref_jerk,
        theta1,
        thrust: Some(thrust),
        envelope: None,
    })
}

/// Compares the analytic roll/pitch reference rates with centered
/// differences of the reference itself at `times`, for each step in `steps`.
pub fn reference_rate_convergence(
    params: &VehicleParams<f64>,
    gains: &ControlGains<f64>,
    times: &[f64],
    steps: &[f64],
) -> Result<RateConvergence, ControlError> {
    let theta_r = |t: f64| -> Result<Vector3<f64>, ControlError> {
        Ok(translational_stage(&flight(t, params)?, params, gains)?.theta_r)
    };
    let mut errors = Vec::with_capacity(steps.len());
    for &h in steps {
        let mut worst: f64 = 0.0;
        for &t in times {
            let analytic = translational_stage(&flight(t, params)?, params, gains)?.theta_r_dot_est;
            let fd = (theta_r(t + h)? - theta_r(t - h)?) / (2.0 * h);
            worst = worst.max((analytic[0] - fd[0]).abs()).max((analytic[1] - fd[1]).abs());
        }
        errors.push(worst);
    }
    let orders = errors.windows(2).zip(steps.windows(2)).map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln()).collect();
    Ok(RateConvergence { steps: steps.to_vec(), errors, orders })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flight_is_consistent_with_the_thrust_model() {
        let p = VehicleParams::hexrotor();
        let inp = flight(0.4, &p).unwrap();
        let acc = crate::vehicle::thrust_direction(&inp.theta1) * (-inp.thrust.unwrap() / p.mass) + Vector3::z() * p.gravity - inp.ref_accel;
        let expected = Vector3::new(-0.392 * 0.28f64.sin(), -0.405 * 0.36f64.cos(), -0.363 * 0.44f64.sin());
        assert!((acc - expected).amax() < 1e-12);
    }

    #[test]
    fn second_order_agreement_with_and_without_error_bound() {
        let p = VehicleParams::hexrotor();
        for delta in [None, Some(1.0)] {
            let g = ControlGains { delta_rho: delta, ..ControlGains::default() };
            let r = reference_rate_convergence(&p, &g, &[0.3, 1.7, 4.0], &[4e-2, 2e-2, 1e-2]).unwrap();
            assert!(r.min_order() > 1.9, "{r:?}");
        }
    }
}
