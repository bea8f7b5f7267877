//! Log-linear fits of decaying signals.

use serde::Serialize;
use thiserror::Error;

use crate::log::LogRecord;

/// Values below this are floored before taking logarithms.
pub const FIT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("fit window [{0}, {1}] holds fewer than two distinct samples")]
    DegenerateWindow(f64, f64),
    #[error("signal is not finite at t = {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpFit {
    /// Decay rate `a` in `y ~ C exp(-a t)`.
    pub rate: f64,
    pub r2: f64,
    pub log_intercept: f64,
    pub samples: usize,
}

/// Least-squares line through `(t, ln max(|y|, floor))` for `t` in `window`.
pub fn exponential_fit(t: &[f64], y: &[f64], window: (f64, f64)) -> Result<ExpFit, FitError> {
    let mut pts = Vec::new();
    for (&ti, &yi) in t.iter().zip(y) {
        if ti < window.0 || ti > window.1 {
            continue;
        }
        if !yi.is_finite() {
            return Err(FitError::NonFinite(ti));
        }
        pts.push((ti, yi.abs().max(FIT_FLOOR).ln()));
    }
    let n = pts.len() as f64;
    let degenerate = FitError::DegenerateWindow(window.0, window.1);
    if pts.len() < 2 {
        return Err(degenerate);
    }
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if stt <= 0.0 {
        return Err(degenerate);
    }
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let slope = sty / stt;
    let intercept = my - slope * mt;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(ExpFit { rate: -slope, r2, log_intercept: intercept, samples: pts.len() })
}

/// [`exponential_fit`] over a selected signal of a run log.
pub fn fit_records(
    records: &[LogRecord],
    signal: impl Fn(&LogRecord) -> f64,
    window: (f64, f64),
) -> Result<ExpFit, FitError> {
    let t: Vec<f64> = records.iter().map(|r| r.t).collect();
    let y: Vec<f64> = records.iter().map(signal).collect();
    exponential_fit(&t, &y, window)
}
