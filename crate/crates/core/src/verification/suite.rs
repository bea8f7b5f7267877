//! The acceptance checks, each returning a pass/fail verdict with the
//! measured quantities.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::fit::{exponential_fit, fit_records};
use super::lyapunov::{closed_form, closed_form_block, closed_loop_matrix, max_real_eigenvalue, residual, solve_lyapunov};
use super::peaking::peaking_probe;
use super::rates::reference_rate_convergence;
use super::region::{domain_constants, invariance_probe, OperatingConditions};
use super::sweep::epsilon_sweep;
use crate::ablation::ablation_run;
use crate::control::{Allocator, ControlGains};
use crate::log::{write_csv, LogRecord};
use crate::observer::Slot;
use crate::scenario::{FeedbackMode, NoiseConfig, RotorEstimateInit, Scenario};
use crate::sim::{run_scenario, Simulation};
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    /// Named measurements next to their acceptance limits.
    pub measured: Vec<(String, f64)>,
    pub note: Option<String>,
}

impl Check {
    fn new(id: u32, name: &str) -> Self {
        Self { id, name: name.into(), passed: true, measured: Vec::new(), note: None }
    }

    fn measure(&mut self, name: &str, value: f64, ok: bool) {
        self.measured.push((name.into(), value));
        self.passed &= ok;
    }

    fn fail(mut self, why: impl ToString) -> Self {
        self.passed = false;
        self.note = Some(why.to_string());
        self
    }

    pub fn line(&self) -> String {
        let m: Vec<String> = self.measured.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect();
        let note = self.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default();
        format!("[{}] criterion {:>2} {}: {}{}", if self.passed { "PASS" } else { "FAIL" }, self.id, self.name, m.join(" "), note)
    }
}

pub const LANDING_DEADLINE: f64 = 60.0;
pub const LANDING_RUNTIME_LIMIT: f64 = 120.0;
pub const ABLATION_SETTLE: f64 = 3.0;
pub const ABLATION_RMS_FRACTION: f64 = 0.05;
pub const ABLATION_CONTACT_WITHOUT: f64 = 0.5;
pub const FIT_R2_MIN: f64 = 0.95;
pub const RATE_BAND: (f64, f64) = (0.5, 1.5);
pub const INVARIANCE_SAMPLES: usize = 1000;
pub const SCALING_BAND: (f64, f64) = (1.5, 2.5);
pub const LYAPUNOV_TOL: f64 = 1e-10;
pub const ALLOCATION_TOL: f64 = 1e-12;
pub const ROTOR_MATCH_TOL: f64 = 1e-12;
pub const ROTOR_RATE_TOL: f64 = 0.05;
pub const RATE_ORDER_MIN: f64 = 1.9;
pub const PEAKING_EPSILONS: [f64; 3] = [0.02, 0.01, 0.005];
pub const DETERMINISM_REPEATS: usize = 3;

/// Landing run with the default scenario.
pub fn landing() -> Check {
    let mut c = Check::new(1, "landing on the moving vehicle");
    let start = Instant::now();
    let r = match run_scenario(&Scenario::landing()) {
        Ok(r) => r,
        Err(e) => return c.fail(e),
    };
    let runtime = start.elapsed().as_secs_f64();
    let Some(t) = r.summary.landing_time else { return c.fail("did not land") };
    let last = r.records.last().expect("landed run has records");
    let speed = (0..3).map(|i| (last.p2[i] - last.xc2[i]).powi(2)).sum::<f64>().sqrt();
    c.measure("landing_time_s", t, t < LANDING_DEADLINE);
    c.measure("touchdown_distance_m", last.tracking_error(), last.tracking_error() <= 0.04);
    c.measure("touchdown_rel_speed", speed, speed < 0.25);
    c.measure("runtime_s", runtime, runtime < LANDING_RUNTIME_LIMIT);
    c
}

/// Rotor model in the observer versus none, with no rotational disturbance.
pub fn ablation() -> Check {
    let mut c = Check::new(2, "actuator-model ablation");
    let r = match ablation_run(&Scenario::ablation(), ABLATION_SETTLE) {
        Ok(r) => r,
        Err(e) => return c.fail(e),
    };
    let w = &r.with_model;
    let rms = w.rms_over_bound.iter().copied().fold(0.0, f64::max);
    c.measure("with_contact_fraction", w.contact_fraction, w.contact_fraction == 0.0 && w.error.is_none());
    c.measure("with_rms_over_bound", rms, rms < ABLATION_RMS_FRACTION);
    let wo = &r.without_model;
    c.measure("without_contact_fraction", wo.contact_fraction, wo.contact_fraction > ABLATION_CONTACT_WITHOUT);
    c.measure("without_dominant_amplitude", wo.dominant_amplitude, true);
    c.measure("identical_noise", f64::from(u8::from(r.identical_noise)), r.identical_noise);
    c
}

/// Noise-free state-feedback run starting close to the moving vehicle.
pub fn state_feedback_scenario() -> Scenario {
    let mut s = Scenario::landing();
    s.name = "state_feedback".into();
    s.mode = FeedbackMode::StateFeedback;
    s.noise = NoiseConfig::off();
    s.gains.approach_offset = 0.0;
    s.stop_on_landing = false;
    s.timing.dt_plant = 1e-3;
    s.timing.controller_rate = None;
    s.timing.duration = 8.0;
    s.initial.p1 = [2.5, -0.3, -0.8];
    s
}

fn xi_rho(r: &LogRecord) -> (Vector6<f64>, Vector6<f64>) {
    let cat = |a: [f64; 3], b: [f64; 3]| Vector6::new(a[0], a[1], a[2], b[0], b[1], b[2]);
    (
        cat(r.slot_true(Slot::Xi1), r.slot_true(Slot::Xi2)),
        cat(r.slot_true(Slot::Rho1), r.slot_true(Slot::Rho2)),
    )
}

/// Slowest decay rate of `diag(A_rho, A_xi)`.
pub fn slowest_closed_loop_rate(g: &ControlGains<f64>) -> f64 {
    [(g.gamma1, g.gamma2), (g.beta1, g.beta2)]
        .iter()
        .map(|&(k1, k2)| {
            let a = closed_loop_matrix(k1, k2);
            -max_real_eigenvalue(&DMatrix::from_column_slice(6, 6, a.as_slice()))
        })
        .fold(f64::INFINITY, f64::min)
}

pub const ATTITUDE_MARGIN: f64 = 0.5;

pub fn state_feedback() -> Check {
    let mut c = Check::new(3, "state-feedback exponential decay and invariance");
    let s = state_feedback_scenario();
    let gains = match s.gains.build::<f64>() {
        Ok(g) => g,
        Err(e) => return c.fail(e),
    };
    let params = VehicleParams::hexrotor();
    let region = match domain_constants(&gains, &params, ATTITUDE_MARGIN, OperatingConditions::default()) {
        Ok(r) => r,
        Err(e) => return c.fail(e),
    };
    let r = match run_scenario(&s) {
        Ok(r) => r,
        Err(e) => return c.fail(e),
    };
    let (xi0, rho0) = xi_rho(&r.records[0]);
    c.measure("v_xi0_over_c_xi", region.v_xi(&xi0) / region.c_xi, region.v_xi(&xi0) < region.c_xi);
    c.measure("v_rho0_over_c_rho", region.v_rho(&rho0) / region.c_rho, region.v_rho(&rho0) < region.c_rho);
    let (mut v_xi_max, mut v_rho_max) = (0.0f64, 0.0f64);
    for rec in &r.records {
        let (xi, rho) = xi_rho(rec);
        v_xi_max = v_xi_max.max(region.v_xi(&xi));
        v_rho_max = v_rho_max.max(region.v_rho(&rho));
    }
    c.measure("max_v_xi_over_c_xi", v_xi_max / region.c_xi, v_xi_max < region.c_xi);
    c.measure("max_v_rho_over_c_rho", v_rho_max / region.c_rho, v_rho_max < region.c_rho);
    let norm = |rec: &LogRecord| {
        let (xi, rho) = xi_rho(rec);
        (xi.norm_squared() + rho.norm_squared()).sqrt()
    };
    let window = (1.0, s.timing.duration);
    match fit_records(&r.records, norm, window) {
        Ok(f) => {
            let slow = slowest_closed_loop_rate(&gains);
            let ratio = f.rate / slow;
            c.measure("fit_r2", f.r2, f.r2 > FIT_R2_MIN);
            c.measure("rate_over_slowest_eigenvalue", ratio, ratio >= RATE_BAND.0 && ratio <= RATE_BAND.1);
        }
        Err(e) => return c.fail(e),
    }
    match invariance_probe(&region, &gains, &params, &s.disturbances, INVARIANCE_SAMPLES, 7, 3.0, 1e-3) {
        Ok(p) => {
            c.measure("invariance_violations", p.violations as f64, p.violations == 0);
            c.measure("invariance_worst_ratio", p.worst_ratio, true);
        }
        Err(e) => return c.fail(e),
    }
    c
}

/// Noise-free landing run with binomial ladders and continuous control,
/// used for the `epsilon` scaling law.
pub fn scaling_scenario() -> Scenario {
    let mut s = Scenario::landing();
    s.name = "epsilon_scaling".into();
    s.noise = NoiseConfig::off();
    s.observer.alpha = [None, None, None];
    s.stop_on_landing = false;
    s.timing.controller_rate = None;
    s.timing.log_rate = 1000.0;
    s.timing.duration = 30.0;
    s
}

pub fn epsilon_scaling() -> Check {
    let mut c = Check::new(4, "estimation error scales with epsilon");
    let rows = match epsilon_sweep(&scaling_scenario(), &[0.02, 0.01]) {
        Ok(r) => r,
        Err(e) => return c.fail(e),
    };
    if let Some(e) = rows.iter().find_map(|r| r.error.clone()) {
        return c.fail(e);
    }
    let (a, b) = (rows[0].disturbance_errors(), rows[1].disturbance_errors());
    for (i, name) in ["sigma_rho", "varsigma", "sigma_xc"].iter().enumerate() {
        let ratio = a[i] / b[i];
        c.measure(&format!("{name}_ratio"), ratio, ratio >= SCALING_BAND.0 && ratio <= SCALING_BAND.1);
    }
    c
}

pub fn lyapunov() -> Check {
    let mut c = Check::new(5, "Lyapunov closed forms");
    let unit = closed_form_block(1.0, 1.0).expect("unit gains are Hurwitz");
    let dev = (unit - nalgebra::Matrix2::new(1.5, 0.5, 0.5, 1.0)).amax();
    c.measure("unit_gain_block_deviation", dev, dev == 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst_gap, mut worst_res) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (k1, k2) = (rng.random_range(0.1..20.0), rng.random_range(0.1..20.0));
        let a = DMatrix::from_column_slice(6, 6, closed_loop_matrix(k1, k2).as_slice());
        let p = DMatrix::from_column_slice(6, 6, closed_form(k1, k2).expect("positive gains").as_slice());
        let n = match solve_lyapunov(&a, &DMatrix::identity(6, 6)) {
            Ok(n) => n,
            Err(e) => return c.fail(e),
        };
        worst_gap = worst_gap.max((&p - &n).amax() / p.amax().max(1.0));
        worst_res = worst_res.max(residual(&p, &a));
    }
    c.measure("closed_vs_numeric", worst_gap, worst_gap < LYAPUNOV_TOL);
    c.measure("residual", worst_res, worst_res < LYAPUNOV_TOL);
    c
}

pub fn allocation() -> Check {
    let mut c = Check::new(6, "minimum-norm allocation");
    let params = VehicleParams::hexrotor();
    let alloc = match Allocator::new(&params) {
        Ok(a) => a,
        Err(e) => return c.fail(e),
    };
    let m = &params.mixer;
    let pinv = alloc.pseudo_inverse();
    let id_err = (m * pinv - DMatrix::<f64>::identity(4, 4)).amax();
    c.measure("m_pinv_identity_error", id_err, id_err < ALLOCATION_TOL);
    let hover = alloc.allocate(params.mass * params.gravity, &Vector3::zeros());
    let spread = hover.omega_sd.max() - hover.omega_sd.min();
    c.measure("hover_spread", spread / hover.omega_sd.max(), spread <= ALLOCATION_TOL * hover.omega_sd.max());
    let target = DVector::from_vec(vec![20.0, 0.3, -0.2, 0.05]);
    let x = pinv * &target;
    let null = DMatrix::<f64>::identity(6, 6) - pinv * m;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut beaten = 0;
    let mut worst_margin = f64::INFINITY;
    for _ in 0..1000 {
        let z = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let alt = &x + &null * z;
        debug_assert!((m * &alt - &target).amax() < 1e-9);
        worst_margin = worst_margin.min(alt.norm() - x.norm());
        beaten += usize::from(alt.norm() < x.norm());
    }
    c.measure("alternatives_shorter", beaten as f64, beaten == 0);
    c.measure("min_norm_margin", worst_margin, worst_margin >= 0.0);
    c
}

pub fn rotor_model() -> Check {
    let mut c = Check::new(7, "simulated rotors track the plant rotors");
    let mut s = Scenario::landing();
    s.observer.initial_rotor_estimate = RotorEstimateInit::MatchPlant;
    let mut sim = match Simulation::<f64>::new(&s) {
        Ok(sim) => sim,
        Err(e) => return c.fail(e),
    };
    sim.set_logging(false);
    let mut worst = 0.0f64;
    let mut clamped = false;
    let out = sim.run_with(|sim| {
        worst = worst.max((sim.omega_hat() - sim.plant().omega).amax());
        clamped |= sim.held().flags.omega_max_clamped;
    });
    if let Err(e) = out {
        return c.fail(e);
    }
    c.measure("matched_max_gap", worst, worst <= ROTOR_MATCH_TOL);
    c.measure("omega_max_clamped", f64::from(u8::from(clamped)), true);

    let mut s = Scenario::landing();
    s.observer.initial_rotor_estimate = RotorEstimateInit::Zero;
    s.timing.duration = 0.5;
    s.timing.log_rate = 1000.0;
    let mut sim = match Simulation::<f64>::new(&s) {
        Ok(sim) => sim,
        Err(e) => return c.fail(e),
    };
    sim.set_logging(false);
    let (mut t, mut gap) = (vec![0.0], vec![(sim.omega_hat() - sim.plant().omega).amax()]);
    if let Err(e) = sim.run_with(|sim| {
        t.push(sim.time());
        gap.push((sim.omega_hat() - sim.plant().omega).amax());
    }) {
        return c.fail(e);
    }
    let expected = 1.0 / s.vehicle.motor_time_constant;
    match exponential_fit(&t, &gap, (0.0, 0.5)) {
        Ok(f) => c.measure("rate_over_inverse_tau", f.rate / expected, (f.rate / expected - 1.0).abs() <= ROTOR_RATE_TOL),
        Err(e) => return c.fail(e),
    }
    c
}

pub fn reference_rates() -> Check {
    let mut c = Check::new(8, "analytic attitude-reference rates");
    let params = VehicleParams::hexrotor();
    match reference_rate_convergence(&params, &ControlGains::default(), &[0.3, 1.7, 4.0, 6.2], &[4e-2, 2e-2, 1e-2, 5e-3]) {
        Ok(r) => {
            c.measure("min_observed_order", r.min_order(), r.min_order() >= RATE_ORDER_MIN);
            c.measure("finest_error", *r.errors.last().expect("steps given"), true);
        }
        Err(e) => return c.fail(e),
    }
    c
}

/// Noise-free landing transient for the peaking study.
pub fn peaking_scenario() -> Scenario {
    let mut s = Scenario::landing();
    s.name = "peaking".into();
    s.noise = NoiseConfig::off();
    s
}

pub fn peaking() -> Check {
    let mut c = Check::new(9, "peaking grows as epsilon shrinks; saturation protects the plant");
    let r = match peaking_probe(&peaking_scenario(), &PEAKING_EPSILONS, 3.0, true) {
        Ok(r) => r,
        Err(e) => return c.fail(e),
    };
    let sat: Vec<_> = r.rows.iter().filter(|r| r.saturation).collect();
    let peaks: Vec<f64> = sat.iter().map(|r| r.peak).collect();
    let monotone = peaks.windows(2).all(|w| w[1] > w[0]);
    for (row, p) in sat.iter().zip(&peaks) {
        c.measure(&format!("peak_eps_{}", row.epsilon), *p, true);
    }
    c.measure("peak_monotone", f64::from(u8::from(monotone)), monotone);
    let durations: Vec<f64> = sat.iter().map(|r| r.time_above_bounds).collect();
    let shrinking = durations.windows(2).all(|w| w[1] < w[0]);
    for (row, d) in sat.iter().zip(&durations) {
        c.measure(&format!("t_above_eps_{}", row.epsilon), *d, true);
    }
    c.measure("t_above_decreasing", f64::from(u8::from(shrinking)), shrinking);
    for row in &sat {
        let inside = row.excursion.box_violation.is_none() && row.error.is_none();
        c.measure(&format!("max_tilt_eps_{}", row.epsilon), row.excursion.max_tilt, inside);
        c.measure(&format!("thrust_over_bound_eps_{}", row.epsilon), row.max_thrust / row.thrust_bound, row.max_thrust <= row.thrust_bound);
    }
    for row in r.rows.iter().filter(|r| !r.saturation) {
        c.measure(&format!("unsaturated_max_thrust_eps_{}", row.epsilon), row.max_thrust, true);
    }
    c
}

pub fn determinism() -> Check {
    let mut c = Check::new(10, "bit-identical logs");
    let s = Scenario::landing();
    let mut logs = Vec::new();
    for _ in 0..DETERMINISM_REPEATS {
        let r = match run_scenario(&s) {
            Ok(r) => r,
            Err(e) => return c.fail(e),
        };
        let mut buf = Vec::new();
        if let Err(e) = write_csv(&mut buf, &r.records, r.n_rotors) {
            return c.fail(e);
        }
        logs.push(buf);
    }
    let same = logs.windows(2).all(|w| w[0] == w[1]);
    c.measure("log_bytes", logs[0].len() as f64, !logs[0].is_empty());
    c.measure("identical", f64::from(u8::from(same)), same);
    c
}

pub type CheckFn = fn() -> Check;

pub const ALL: [CheckFn; 10] =
    [landing, ablation, state_feedback, epsilon_scaling, lyapunov, allocation, rotor_model, reference_rates, peaking, determinism];

/// Runs every check on its own thread; results are in criterion order.
pub fn run_all() -> Vec<Check> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = ALL.iter().map(|f| scope.spawn(*f)).collect();
        handles.into_iter().map(|h| h.join().expect("check panicked")).collect()
    })
}
