use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use ehgo_core::ablation::ablation_run;
use ehgo_core::log::write_csv_file;
use ehgo_core::scenario::Scenario;
use ehgo_core::sim::{run_scenario, RunResult, SimError};
use ehgo_core::verification::{suite, sweep::epsilon_sweep};
use serde::Serialize;

use crate::{Failure, ScenarioArgs, EXIT_CHECKS_FAILED};

/// Reads, overrides and validates a scenario file.
pub fn load(args: &ScenarioArgs) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(&args.scenario)
        .with_context(|| format!("scenario: cannot read {}", args.scenario.display()))?;
    let base = Scenario::from_json(&text).with_context(|| format!("scenario {}", args.scenario.display()))?;
    let mut s = base.with_overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    Ok(s)
}

pub fn sim_failure(e: SimError) -> Failure {
    if e.is_numerical() {
        Failure::Diverged(e.into())
    } else {
        Failure::Config(e.into())
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)?;
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_run(dir: &Path, r: &RunResult) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_csv_file(&dir.join("log.csv"), &r.records, r.n_rotors).context("writing log.csv")?;
    write_json(dir, "summary.json", &r.summary)
}

pub fn run(args: &ScenarioArgs, out: &Path) -> Result<u8, Failure> {
    let s = load(args)?;
    match run_scenario(&s) {
        Ok(r) => {
            write_run(out, &r)?;
            match r.summary.landing_time {
                Some(t) => log::info!("{}: landed at t = {t:.3} s", s.name),
                None => log::info!("{}: completed at t = {:.3} s without landing", s.name, r.summary.final_time),
            }
            Ok(0)
        }
        Err(f) => {
            if !f.error.is_numerical() {
                return Err(Failure::Config(f.error.into()));
            }
            if let Some(partial) = &f.partial {
                write_run(out, partial)?;
            }
            Err(Failure::Diverged(f.error.into()))
        }
    }
}

pub fn ablate(args: &ScenarioArgs, out: &Path, settle: f64) -> Result<u8, Failure> {
    let s = load(args)?;
    let report = ablation_run(&s, settle).map_err(|f| sim_failure(f.error))?;
    for m in [&report.with_model, &report.without_model] {
        log::info!(
            "actuator model {}: contact {:.4}, dominant amplitude {:.4} at {:.2} Hz",
            if m.include_actuator_dynamics { "on " } else { "off" },
            m.contact_fraction,
            m.dominant_amplitude,
            m.dominant_frequency
        );
    }
    fs::create_dir_all(out)?;
    write_json(out, "ablation.json", &report)?;
    Ok(0)
}

pub fn sweep(args: &ScenarioArgs, out: &Path, epsilons: &[f64]) -> Result<u8, Failure> {
    if let Some(e) = epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(Failure::Config(anyhow!("epsilon: {e} is not a positive number")));
    }
    let s = load(args)?;
    let rows = epsilon_sweep(&s, epsilons).map_err(sim_failure)?;
    for r in &rows {
        match &r.error {
            None => log::info!(
                "eps {:.4}: sigma_rho {:.3e}, varsigma {:.3e}, sigma_xc {:.3e}",
                r.epsilon,
                r.sigma_rho,
                r.varsigma,
                r.sigma_xc
            ),
            Some(e) => log::warn!("eps {:.4}: {e}", r.epsilon),
        }
    }
    fs::create_dir_all(out)?;
    write_json(out, "sweep.json", &rows)?;
    Ok(0)
}

pub fn verify(out: &Path) -> Result<u8, Failure> {
    let checks = suite::run_all();
    for c in &checks {
        println!("{}", c.line());
    }
    fs::create_dir_all(out)?;
    write_json(out, "verification.json", &checks)?;
    Ok(if checks.iter().all(|c| c.passed) { 0 } else { EXIT_CHECKS_FAILED })
}
