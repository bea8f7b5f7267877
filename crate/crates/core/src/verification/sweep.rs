//! Steady-state estimation error as a function of the observer's `epsilon`.

use serde::Serialize;

use crate::log::{final_quarter, LogRecord};
use crate::observer::Slot;
use crate::scenario::{FeedbackMode, NoiseConfig, Scenario};
use crate::sim::{resolve_saturation_bounds, run_scenario, SimError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub dt_plant: f64,
    /// RMS estimation errors over the final quarter, components pooled.
    pub sigma_rho: f64,
    pub varsigma: f64,
    pub sigma_xc: f64,
    pub xc: f64,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn disturbance_errors(&self) -> [f64; 3] {
        [self.sigma_rho, self.varsigma, self.sigma_xc]
    }
}

/// Largest `dt / k` (integer `k`) not above `epsilon / 10`.
pub fn refined_dt(dt: f64, epsilon: f64) -> f64 {
    let k = (dt / (epsilon / 10.0) - 1e-9).ceil().max(1.0);
    dt / k
}

/// True lumped rotational term `sigma_xi - theta_r''` at each interior
/// record. The attitude reference is recovered as `theta1 - xi1`; the
/// second derivative is a centered difference over neighbouring records.
pub fn lumped_varsigma(records: &[LogRecord]) -> Vec<Option<[f64; 3]>> {
    let theta_r = |r: &LogRecord| {
        let xi1 = r.slot_true(Slot::Xi1);
        [0, 1, 2].map(|i| r.theta1[i] - xi1[i])
    };
    (0..records.len())
        .map(|k| {
            if k == 0 || k + 1 >= records.len() {
                return None;
            }
            let (a, b, c) = (&records[k - 1], &records[k], &records[k + 1]);
            let h = c.t - b.t;
            if (b.t - a.t - h).abs() > 1e-9 * h {
                return None;
            }
            let (ra, rb, rc) = (theta_r(a), theta_r(b), theta_r(c));
            let sigma = b.sigma_xi_true();
            Some([0, 1, 2].map(|i| sigma[i] - (ra[i] - 2.0 * rb[i] + rc[i]) / (h * h)))
        })
        .collect()
}

fn pooled_rms(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 { 0.0 } else { (s / n as f64).sqrt() }
}

/// Final-quarter error statistics of an output-feedback log.
pub fn steady_state_errors(records: &[LogRecord]) -> (f64, f64, f64, f64) {
    let q = final_quarter(records);
    let start = records.len() - q.len();
    let lumped = lumped_varsigma(records);
    let err = |s: Slot| pooled_rms(q.iter().flat_map(move |r| {
        let (a, b) = (r.slot_true(s), r.slot_hat(s));
        (0..3).map(move |i| a[i] - b[i])
    }));
    let varsigma = pooled_rms(q.iter().enumerate().filter_map(|(j, r)| lumped[start + j].map(|v| (v, r))).flat_map(|(v, r)| {
        let h = r.slot_hat(Slot::Varsigma);
        (0..3).map(move |i| v[i] - h[i])
    }));
    let xc = pooled_rms([Slot::Xc1, Slot::Xc2, Slot::Xc3].iter().flat_map(|s| q.iter().flat_map(move |r| {
        let (a, b) = (r.slot_true(*s), r.slot_hat(*s));
        (0..3).map(move |i| a[i] - b[i])
    })));
    (err(Slot::SigmaRho), varsigma, err(Slot::SigmaXc), xc)
}

/// Noise-free output-feedback runs of `base` at each `epsilon`, run in
/// parallel. Saturation bounds are resolved once and shared; `dt_plant` is
/// refined where the stiffness limit requires it. Numerical failures are
/// reported in the row.
pub fn epsilon_sweep(base: &Scenario, epsilons: &[f64]) -> Result<Vec<SweepRow>, SimError> {
    let mut base = base.clone();
    base.mode = FeedbackMode::OutputFeedback;
    base.noise = NoiseConfig::off();
    if base.observer.saturation.enabled {
        base.observer.saturation.bounds = resolve_saturation_bounds(&base)?;
    }
    let scenarios = epsilons
        .iter()
        .map(|&eps| {
            let mut s = base.clone();
            s.observer.epsilon = eps;
            s.timing.dt_plant = refined_dt(base.timing.dt_plant, eps);
            s.validate()?;
            Ok(s)
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let rows = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios.iter().map(|s| scope.spawn(move || sweep_row(s))).collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect::<Vec<_>>()
    });
    rows.into_iter().collect()
}

fn sweep_row(s: &Scenario) -> Result<SweepRow, SimError> {
    let mut row = SweepRow {
        epsilon: s.observer.epsilon,
        dt_plant: s.timing.dt_plant,
        sigma_rho: f64::NAN,
        varsigma: f64::NAN,
        sigma_xc: f64::NAN,
        xc: f64::NAN,
        error: None,
    };
    match run_scenario(s) {
        Ok(r) => {
            (row.sigma_rho, row.varsigma, row.sigma_xc, row.xc) = steady_state_errors(&r.records);
            Ok(row)
        }
        Err(f) if f.error.is_numerical() => {
            row.error = Some(f.error.to_string());
            Ok(row)
        }
        Err(f) => Err(f.error),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dt_refinement() {
        assert_eq!(refined_dt(1e-4, 0.02), 1e-4);
        assert!((refined_dt(1e-3, 0.005) - 5e-4).abs() < 1e-18);
        assert!((refined_dt(1e-3, 0.004) - 1e-3 / 3.0).abs() < 1e-18);
    }

    #[test]
    fn lumped_term_of_a_quadratic_reference() {
        // theta_r = t^2 in every axis, so theta_r'' = 2.
        let recs: Vec<LogRecord> = (0..5)
            .map(|k| {
                let t = k as f64 * 0.1;
                let mut r = LogRecord { t, theta1: [t * t + 0.5; 3], ..Default::default() };
                let (xo, so) = (Slot::Xi1.offset(), Slot::Varsigma.offset());
                for i in 0..3 {
                    r.chi_true[xo + i] = 0.5;
                    r.chi_true[so + i] = 1.0;
                }
                r
            })
            .collect();
        let l = lumped_varsigma(&recs);
        assert!(l[0].is_none() && l[4].is_none());
        for v in l[1..4].iter() {
            let v = v.unwrap();
            assert!(v.iter().all(|x| (x + 1.0).abs() < 1e-9), "{v:?}");
        }
    }
}
