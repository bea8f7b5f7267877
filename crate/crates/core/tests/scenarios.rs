use std::path::PathBuf;

use ehgo_core::scenario::Scenario;

fn bundled(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"));
    Scenario::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

#[test]
fn bundled_files_match_built_ins() {
    assert_eq!(bundled("landing_sim"), Scenario::landing());
    assert_eq!(bundled("ablation"), Scenario::ablation());
    assert_eq!(bundled("station_keeping"), Scenario::station_keeping());
    assert_eq!(bundled("teleop"), Scenario::teleop());
}

#[test]
fn landing_constants() {
    let s = bundled("landing_sim");
    assert_eq!(s.initial.p1, [-10.0, 1.0, -5.0]);
    assert_eq!(s.initial.xc1, [2.0, 0.0, -0.5]);
    assert_eq!(s.disturbances.sigma_xi(1.0), nalgebra::Vector3::new(1f64.sin(), 1f64.cos(), 1f64.sin()));
    assert_eq!(s.disturbances.sigma_rho(1.0), nalgebra::Vector3::new(1f64.cos(), 1f64.sin(), 1f64.cos()));
    assert!(s.noise.position > 0.0 && s.noise.attitude > 0.0 && s.noise.reference_position > 0.0);
}
