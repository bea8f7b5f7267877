use ehgo_core::observer::Slot;
use ehgo_core::scenario::Scenario;
use ehgo_core::teleop::{ServerFrame, TeleopSession};

#[test]
fn held_command_is_picked_up_by_the_reference_estimate() {
    let mut s = TeleopSession::new(&Scenario::teleop()).unwrap();
    s.set_command(0.3, 0.0);
    s.advance(5.0).unwrap();
    let r = s.simulation().record();
    let est = r.slot_hat(Slot::Xc2);
    assert!((est[0] - 0.3).abs() < 0.01 && est[1].abs() < 0.01, "{est:?}");
}

#[test]
fn driving_a_circle_ends_in_a_landing_and_a_frozen_state() {
    let mut s = TeleopSession::new(&Scenario::teleop()).unwrap();
    let w = 2.0 * std::f64::consts::PI / 20.0;
    let mut landed = None;
    let mut t = 0.0;
    while t < 30.0 && landed.is_none() {
        s.set_command(0.3 * (w * t).cos(), 0.3 * (w * t).sin());
        t += 0.05;
        landed = s.advance(t).unwrap();
    }
    let Some(ServerFrame::Event { name, t: t_land, .. }) = landed else { panic!("no landing within 30 s") };
    assert_eq!(name, "landed");
    assert!(s.is_finished());
    let before = s.snapshot();
    assert!(s.advance(t_land + 5.0).unwrap().is_none());
    assert_eq!(s.snapshot(), before);
    let ServerFrame::State { landed, t, .. } = before else { panic!() };
    assert!(landed);
    assert_eq!(t, t_land);
}
