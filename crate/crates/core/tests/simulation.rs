use std::path::PathBuf;

use ehgo_core::disturbance::DisturbanceSpec;
use ehgo_core::integrate::{rk4_step, NonFiniteState};
use ehgo_core::log::{csv_header, write_csv};
use ehgo_core::scenario::{FeedbackMode, NoiseConfig, Scenario};
use ehgo_core::sim::{run_scenario, SimError, Simulation};
use ehgo_core::vehicle::{rotational_derivative, VehicleParams, VehicleState};
use nalgebra::{DVector, Vector3};
use proptest::prelude::*;

fn golden(name: &str) -> String {
    std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

#[test]
fn csv_header_is_stable() {
    assert_eq!(csv_header(6).join(",") + "\n", golden("header_hex.txt"));
}

/// The first 50 ms of the landing run fixes the per-step order of noise,
/// control, logging and integration.
#[test]
fn step_order_golden_log() {
    let mut s = Scenario::landing();
    s.timing.duration = 0.05;
    s.timing.log_rate = 1000.0;
    let r = run_scenario(&s).unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, &r.records, 6).unwrap();
    let ours = String::from_utf8(buf).unwrap();
    let want = golden("landing_first_50ms.csv");
    let (ours, want): (Vec<&str>, Vec<&str>) = (ours.lines().collect(), want.lines().collect());
    assert_eq!(ours.len(), want.len());
    assert_eq!(ours[..2], want[..2]);
    for (a, b) in ours[2..].iter().zip(&want[2..]) {
        for (x, y) in a.split(',').zip(b.split(',')) {
            let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
            assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0), "{x} vs {y}");
        }
    }
}

#[test]
fn rk4_global_error_is_fourth_order_on_the_rotational_plant() {
    let p = VehicleParams::hexrotor();
    let f = |_t: f64, x: &DVector<f64>| -> Result<DVector<f64>, NonFiniteState> {
        let mut st = VehicleState::at_rest(Vector3::zeros(), 6);
        st.theta1 = Vector3::new(x[0], x[1], x[2]);
        st.theta2 = Vector3::new(x[3], x[4], x[5]);
        let (a, b) = rotational_derivative(&st, &Vector3::zeros(), &Vector3::zeros(), &p).unwrap();
        Ok(DVector::from_iterator(6, a.iter().chain(b.iter()).copied()))
    };
    let x0 = DVector::from_vec(vec![0.1, -0.2, 0.3, 1.0, -0.5, 0.8]);
    let solve = |dt: f64| {
        let mut x = x0.clone();
        let n = (1.0 / dt).round() as usize;
        for k in 0..n {
            x = rk4_step(f, &x, k as f64 * dt, dt).unwrap();
        }
        x
    };
    let reference = solve(1e-4);
    let errs: Vec<f64> = [0.04, 0.02, 0.01].iter().map(|&dt| (solve(dt) - &reference).amax()).collect();
    for w in errs.windows(2) {
        let slope = (w[0] / w[1]).log2();
        assert!((slope - 4.0).abs() < 0.3, "slope {slope}");
    }
}

#[test]
fn equal_scenarios_give_identical_logs() {
    let mut s = Scenario::landing();
    s.timing.duration = 1.0;
    let a = run_scenario(&s).unwrap();
    let b = run_scenario(&s).unwrap();
    assert_eq!(a.records, b.records);
    let mut other = s.clone();
    other.seed = 2;
    assert_ne!(run_scenario(&other).unwrap().records, a.records);
}

#[test]
fn state_feedback_hover_and_records_are_finite() {
    let mut s = Scenario::station_keeping();
    s.mode = FeedbackMode::StateFeedback;
    s.noise = NoiseConfig::off();
    s.timing.dt_plant = 1e-3;
    s.timing.duration = 3.0;
    let r = run_scenario(&s).unwrap();
    assert!(r.records.windows(2).all(|w| w[1].t > w[0].t));
    for rec in &r.records {
        assert!(rec.p1.iter().chain(&rec.chi_true).chain(&rec.chi_hat).all(|v| v.is_finite()));
    }
}

#[test]
fn zero_disturbance_perfect_start_hover() {
    let mut s = Scenario::station_keeping();
    s.disturbances = DisturbanceSpec::none();
    s.noise = NoiseConfig::off();
    s.gains.approach_offset = 0.0;
    s.initial.p1 = s.initial.xc1;
    s.observer.initial_rotor_estimate = ehgo_core::scenario::RotorEstimateInit::MatchPlant;
    s.observer.saturation.enabled = false;
    s.timing.duration = 3.0;
    let mut sim = Simulation::<f64>::new(&s).unwrap();
    let mut worst: f64 = 0.0;
    sim.run_with(|sim| worst = worst.max((sim.plant().p1 - Vector3::from(s.initial.xc1)).norm())).unwrap();
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn divergence_is_an_error_with_a_partial_log() {
    let mut s = Scenario::landing();
    s.observer.epsilon = 0.2;
    s.observer.saturation.enabled = false;
    s.gains.min_lift = 50.0;
    s.gains.max_tilt = 1.5;
    s.timing.duration = 20.0;
    let f = run_scenario(&s).unwrap_err();
    assert!(f.error.is_numerical(), "{}", f.error);
    let partial = f.partial.unwrap();
    assert!(!partial.records.is_empty());
    assert!(partial.summary.error.is_some());
    for rec in &partial.records {
        assert!(rec.p1.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn velocity_commands_need_a_commandable_driver() {
    let mut sim = Simulation::<f64>::new(&Scenario::station_keeping()).unwrap();
    assert!(matches!(sim.set_velocity_command(0.1, 0.0), Err(SimError::Unsupported(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn short_runs_are_reproducible_for_any_seed(seed in 0u64..1_000_000) {
        let mut s = Scenario::landing();
        s.seed = seed;
        s.timing.duration = 0.05;
        let a = run_scenario(&s).unwrap();
        let b = run_scenario(&s).unwrap();
        prop_assert_eq!(a.records, b.records);
    }
}
