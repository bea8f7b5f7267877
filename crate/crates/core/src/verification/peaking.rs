//! Transient peaking of the observer estimates and its effect on the plant.

use serde::Serialize;

use crate::observer::{Slot, N_EST};
use crate::scalar::to_f64;
use crate::scenario::{FeedbackMode, SaturationBounds, Scenario};
use crate::sim::{resolve_saturation_bounds, SimError, Simulation};
use crate::vehicle::euler_rate_matrix_inv;

use super::sweep::refined_dt;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Excursion {
    pub max_tilt: f64,
    pub max_body_rate: f64,
    pub max_speed: f64,
    /// First time the plant left the operating box.
    pub box_violation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakingRow {
    pub epsilon: f64,
    pub saturation: bool,
    /// Largest unsaturated estimate magnitude and where it occurred.
    pub peak: f64,
    pub peak_slot: String,
    pub peak_time: f64,
    /// Total time any estimate was outside its saturation bound.
    pub time_above_bounds: f64,
    /// Last time any estimate was outside its bound.
    pub last_above_bounds: Option<f64>,
    pub excursion: Excursion,
    /// Largest commanded thrust, and the bound implied by the saturation
    /// limits and the control law.
    pub max_thrust: f64,
    pub thrust_bound: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakingReport {
    pub scenario: String,
    pub duration: f64,
    pub bounds: SaturationBounds,
    pub rows: Vec<PeakingRow>,
}

/// Largest thrust the output-feedback law can command when every estimate
/// is inside `bounds`: `m |f|` with each virtual-force component at its
/// extreme.
pub fn thrust_bound(s: &Scenario, bounds: &SaturationBounds) -> f64 {
    let g = &s.gains;
    let b = |slot: Slot| bounds.get(slot).unwrap_or([f64::INFINITY; 3]);
    let (rho1, rho2, sig, acc) = (b(Slot::Rho1), b(Slot::Rho2), b(Slot::SigmaRho), b(Slot::Xc3));
    let f = [0, 1, 2].map(|i| {
        let offset = if i == 2 { g.approach_offset } else { 0.0 };
        let r1 = g.delta_rho.map_or(rho1[i] + offset, |d| d.min(rho1[i] + offset));
        let gravity = if i == 2 { s.vehicle.gravity } else { 0.0 };
        g.gamma1 * r1 + g.gamma2 * rho2[i] + sig[i] + acc[i] + gravity
    });
    s.vehicle.mass * (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt()
}

fn probe_one(s: &Scenario, bounds: &SaturationBounds) -> Result<PeakingRow, SimError> {
    let b: [f64; N_EST] = {
        let chi = bounds.to_chi::<f64>();
        let mut a = [0.0; N_EST];
        a.copy_from_slice(chi.as_slice());
        a
    };
    let mut row = PeakingRow {
        epsilon: s.observer.epsilon,
        saturation: s.observer.saturation.enabled,
        peak: 0.0,
        peak_slot: String::new(),
        peak_time: 0.0,
        time_above_bounds: 0.0,
        last_above_bounds: None,
        excursion: Excursion { max_tilt: 0.0, max_body_rate: 0.0, max_speed: 0.0, box_violation: None },
        max_thrust: 0.0,
        thrust_bound: thrust_bound(s, bounds),
        error: None,
    };
    let mut sim = Simulation::<f64>::new(s)?;
    sim.set_logging(false);
    let dt = s.timing.dt_plant;
    let guard = s.vehicle.euler_guard;
    let observe = |sim: &Simulation<f64>, row: &mut PeakingRow| {
        let chi = sim.estimates();
        let mut above = false;
        for (i, v) in chi.iter().enumerate() {
            let m = v.abs();
            if m > row.peak {
                row.peak = m;
                row.peak_slot = Slot::ALL[i / 3].name().to_string();
                row.peak_time = sim.time();
            }
            above |= m > b[i];
        }
        if above {
            row.time_above_bounds += dt;
            row.last_above_bounds = Some(sim.time());
        }
        let st = sim.plant();
        let tilt = (st.theta1[0].cos() * st.theta1[1].cos()).clamp(-1.0, 1.0).acos();
        let e = &mut row.excursion;
        e.max_tilt = e.max_tilt.max(tilt);
        if let Ok(m) = euler_rate_matrix_inv(&st.theta1, guard) {
            e.max_body_rate = e.max_body_rate.max((m * st.theta2).amax());
        }
        e.max_speed = e.max_speed.max(st.p2.norm());
        row.max_thrust = row.max_thrust.max(to_f64(sim.held().u_fd));
    };
    observe(&sim, &mut row);
    let outcome = sim.run_with(|s| observe(s, &mut row));
    row.excursion.box_violation = sim.operating_box_violation();
    match outcome {
        Ok(()) => Ok(row),
        Err(e) if e.is_numerical() => {
            row.error = Some(e.to_string());
            if row.excursion.box_violation.is_none() {
                row.excursion.box_violation = Some(sim.time());
            }
            Ok(row)
        }
        Err(e) => Err(e),
    }
}

/// Runs the first `duration` seconds of `base` in output feedback at each
/// `epsilon`, with saturation on and, when `compare_unsaturated`, off.
/// Bounds are resolved once and shared by every run.
pub fn peaking_probe(
    base: &Scenario,
    epsilons: &[f64],
    duration: f64,
    compare_unsaturated: bool,
) -> Result<PeakingReport, SimError> {
    let mut base = base.clone();
    base.mode = FeedbackMode::OutputFeedback;
    base.timing.duration = duration;
    base.observer.saturation.enabled = true;
    let bounds = resolve_saturation_bounds(&base)?;
    base.observer.saturation.bounds = bounds.clone();
    let mut scenarios = Vec::new();
    for &eps in epsilons {
        for sat in [true, false] {
            if !sat && !compare_unsaturated {
                continue;
            }
            let mut s = base.clone();
            s.observer.epsilon = eps;
            s.observer.saturation.enabled = sat;
            s.timing.dt_plant = refined_dt(base.timing.dt_plant, eps);
            s.validate()?;
            scenarios.push(s);
        }
    }
    let rows = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios.iter().map(|s| scope.spawn(|| probe_one(s, &bounds))).collect();
        handles.into_iter().map(|h| h.join().expect("peaking worker panicked")).collect::<Vec<_>>()
    });
    Ok(PeakingReport { scenario: base.name.clone(), duration, bounds, rows: rows.into_iter().collect::<Result<_, _>>()? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thrust_bound_is_hover_plus_margins() {
        let mut s = Scenario::landing();
        s.gains.delta_rho = Some(1.0);
        let mut b = SaturationBounds::default();
        for slot in Slot::ALL {
            b.set(slot, [0.0; 3]);
        }
        b.set(Slot::Rho1, [2.0; 3]);
        let expected = s.vehicle.mass * ((2.0 * 16.0) + (s.vehicle.gravity + 4.0).powi(2)).sqrt();
        assert!((thrust_bound(&s, &b) - expected).abs() < 1e-12);
    }
}
