use ehgo_core::disturbance::DisturbanceSpec;
use ehgo_core::scenario::{ReferenceConfig, Scenario};
use ehgo_core::verification::lyapunov::{closed_form, closed_loop_matrix, residual, solve_lyapunov};
use ehgo_core::verification::sweep::epsilon_sweep;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn quiet(mut s: Scenario) -> Scenario {
    s.stop_on_landing = false;
    s.timing.duration = 10.0;
    s.timing.log_rate = 1000.0;
    s.timing.controller_rate = None;
    s
}

#[test]
fn zero_disturbance_sweep_sits_at_the_numerical_floor() {
    let mut s = quiet(Scenario::ablation());
    s.disturbances = DisturbanceSpec::none();
    s.reference = ReferenceConfig::ConstantVelocity;
    for row in epsilon_sweep(&s, &[0.02, 0.01]).unwrap() {
        assert!(row.error.is_none());
        for e in row.disturbance_errors() {
            assert!(e < 1e-6, "{row:?}");
        }
    }
}

#[test]
fn unstable_epsilon_is_reported_not_fatal() {
    let mut s = quiet(Scenario::landing());
    s.observer.saturation.enabled = false;
    s.gains.min_lift = 50.0;
    s.gains.max_tilt = 1.5;
    let rows = epsilon_sweep(&s, &[0.2]).unwrap();
    assert!(rows[0].error.is_some(), "{rows:?}");
}

proptest! {
    #[test]
    fn closed_form_solves_the_lyapunov_equation(k1 in 0.05f64..30.0, k2 in 0.05f64..30.0) {
        let a = DMatrix::from_column_slice(6, 6, closed_loop_matrix(k1, k2).as_slice());
        let p = DMatrix::from_column_slice(6, 6, closed_form(k1, k2).unwrap().as_slice());
        prop_assert!(residual(&p, &a) < 1e-10 * p.amax().max(1.0));
        let n = solve_lyapunov(&a, &DMatrix::identity(6, 6)).unwrap();
        prop_assert!((&n - &p).amax() < 1e-9 * p.amax().max(1.0));
        prop_assert!(p.symmetric_eigen().eigenvalues.min() > 0.0);
    }
}
