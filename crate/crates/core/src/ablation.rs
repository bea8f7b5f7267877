//! Paired runs with and without the rotor model inside the observer.

use serde::{Deserialize, Serialize};

use crate::log::LogRecord;
use crate::observer::Slot;
use crate::scenario::Scenario;
use crate::sim::{run_scenario, RunFailure, Simulation};

/// Behaviour of the lumped rotational estimate after the transient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationMetric {
    pub include_actuator_dynamics: bool,
    /// Fraction of samples with any component at its saturation bound.
    pub contact_fraction: f64,
    /// RMS of each component divided by its bound.
    pub rms_over_bound: [f64; 3],
    /// Largest single-frequency amplitude over the components.
    pub dominant_amplitude: f64,
    pub dominant_frequency: f64,
    pub samples: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub scenario: String,
    pub seed: u64,
    pub settle_time: f64,
    pub bounds: [f64; 3],
    pub with_model: OscillationMetric,
    pub without_model: OscillationMetric,
    /// The two runs drew identical measurement noise.
    pub identical_noise: bool,
}

/// Amplitude and frequency (Hz) of the strongest DFT bin of `x`, mean removed.
pub fn dominant_component(x: &[f64], dt: f64) -> (f64, f64) {
    let n = x.len();
    if n < 4 {
        return (0.0, 0.0);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut best = (0.0, 0.0);
    for k in 1..=n / 2 {
        let w = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (j, v) in x.iter().enumerate() {
            let a = w * j as f64;
            re += (v - mean) * a.cos();
            im -= (v - mean) * a.sin();
        }
        let scale = if 2 * k == n { 1.0 } else { 2.0 };
        let amp = scale * (re * re + im * im).sqrt() / n as f64;
        if amp > best.0 {
            best = (amp, k as f64 / (n as f64 * dt));
        }
    }
    best
}

/// Contact fraction, RMS and dominant oscillation of the `varsigma`
/// estimate on records with `t >= settle`.
pub fn oscillation_metric(records: &[LogRecord], bounds: [f64; 3], settle: f64, include: bool) -> OscillationMetric {
    let after: Vec<&LogRecord> = records.iter().filter(|r| r.t >= settle).collect();
    let n = after.len();
    let mut contact = 0usize;
    let mut sq = [0.0; 3];
    let mut series = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for r in &after {
        let h = r.slot_hat(Slot::Varsigma);
        let mut hit = false;
        for i in 0..3 {
            let v = h[i].clamp(-bounds[i], bounds[i]);
            hit |= v.abs() >= bounds[i] * (1.0 - 1e-9);
            sq[i] += v * v;
            series[i].push(v);
        }
        contact += usize::from(hit);
    }
    let dt = if n > 1 { after[1].t - after[0].t } else { 1.0 };
    let (mut amp, mut freq) = (0.0, 0.0);
    for s in &series {
        let (a, f) = dominant_component(s, dt);
        if a > amp {
            (amp, freq) = (a, f);
        }
    }
    let nn = n.max(1) as f64;
    OscillationMetric {
        include_actuator_dynamics: include,
        contact_fraction: contact as f64 / nn,
        rms_over_bound: [0, 1, 2].map(|i| (sq[i] / nn).sqrt() / bounds[i]),
        dominant_amplitude: amp,
        dominant_frequency: freq,
        samples: n,
        error: None,
    }
}

/// Runs `scenario` twice with the same seed, toggling the rotor model in the
/// observer. Both runs use the saturation bounds resolved for the first.
pub fn ablation_run(scenario: &Scenario, settle: f64) -> Result<AblationReport, RunFailure> {
    let mut with = scenario.clone();
    with.observer.include_actuator_dynamics = true;
    let probe = Simulation::<f64>::new(&with).map_err(|error| RunFailure { error, partial: None })?;
    let resolved = probe.saturation_bounds().cloned();
    let mut without = with.clone();
    without.observer.include_actuator_dynamics = false;
    if let Some(b) = &resolved {
        with.observer.saturation.bounds = b.clone();
        without.observer.saturation.bounds = b.clone();
    }
    let other = Simulation::<f64>::new(&without).map_err(|error| RunFailure { error, partial: None })?;
    let steps = (scenario.timing.duration / scenario.timing.dt_plant).round() as u64;
    let identical_noise = (0..steps.min(10_000)).all(|k| probe.measurement_noise(k) == other.measurement_noise(k));
    let bounds = resolved.as_ref().and_then(|b| b.get(Slot::Varsigma)).unwrap_or([f64::INFINITY; 3]);

    let measure = |s: &Scenario, include: bool| match run_scenario(s) {
        Ok(r) => Ok(oscillation_metric(&r.records, bounds, settle, include)),
        Err(f) if f.error.is_numerical() => {
            let records = f.partial.map(|p| p.records).unwrap_or_default();
            let mut m = oscillation_metric(&records, bounds, settle, include);
            m.error = Some(f.error.to_string());
            Ok(m)
        }
        Err(f) => Err(f),
    };
    Ok(AblationReport {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        settle_time: settle,
        bounds,
        with_model: measure(&with, true)?,
        without_model: measure(&without, false)?,
        identical_noise,
    })
}
