//! Run records, CSV emission and run summaries.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::observer::{Slot, N_EST};

pub const LOG_FORMAT_VERSION: u32 = 1;

/// One logged sample. Vectors are `[x, y, z]`; rotor vectors have one entry
/// per rotor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub theta1: [f64; 3],
    pub theta2: [f64; 3],
    pub p1: [f64; 3],
    pub p2: [f64; 3],
    pub omega: Vec<f64>,
    pub xc1: [f64; 3],
    pub xc2: [f64; 3],
    /// True counterparts of the 30 estimates. The `varsigma` slot holds the
    /// lumped rotational term when it is known exactly (state feedback) and
    /// the applied disturbance `sigma_xi` otherwise.
    pub chi_true: [f64; N_EST],
    pub chi_hat: [f64; N_EST],
    pub omega_hat: Vec<f64>,
    pub theta_r: [f64; 3],
    pub theta_r_dot: [f64; 3],
    pub u_fd: f64,
    pub torque_d: [f64; 3],
    pub omega_des: Vec<f64>,
    /// Estimates clipped at the most recent controller update.
    pub sat_clipped: u32,
    pub negative_clamped: bool,
    pub omega_max_clamped: bool,
    pub envelope_clamped: bool,
    pub offset_active: bool,
    pub landed: bool,
}

impl LogRecord {
    pub fn sigma_xi_true(&self) -> [f64; 3] {
        self.slot_true(Slot::Varsigma)
    }

    pub fn slot_true(&self, s: Slot) -> [f64; 3] {
        let o = s.offset();
        [self.chi_true[o], self.chi_true[o + 1], self.chi_true[o + 2]]
    }

    pub fn slot_hat(&self, s: Slot) -> [f64; 3] {
        let o = s.offset();
        [self.chi_hat[o], self.chi_hat[o + 1], self.chi_hat[o + 2]]
    }

    /// `|p1 - xc1|`.
    pub fn tracking_error(&self) -> f64 {
        (0..3).map(|i| (self.p1[i] - self.xc1[i]).powi(2)).sum::<f64>().sqrt()
    }

    fn values(&self) -> Vec<f64> {
        let mut v = vec![self.t];
        for a in [&self.theta1, &self.theta2, &self.p1, &self.p2] {
            v.extend_from_slice(a);
        }
        v.extend_from_slice(&self.omega);
        v.extend_from_slice(&self.xc1);
        v.extend_from_slice(&self.xc2);
        v.extend_from_slice(&self.chi_true);
        v.extend_from_slice(&self.chi_hat);
        v.extend_from_slice(&self.omega_hat);
        v.extend_from_slice(&self.theta_r);
        v.extend_from_slice(&self.theta_r_dot);
        v.push(self.u_fd);
        v.extend_from_slice(&self.torque_d);
        v.extend_from_slice(&self.omega_des);
        v
    }
}

/// Column names for `n` rotors.
pub fn csv_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    let xyz = |p: &str, h: &mut Vec<String>| {
        for a in ["x", "y", "z"] {
            h.push(format!("{p}_{a}"));
        }
    };
    for p in ["theta1", "theta2", "p1", "p2"] {
        xyz(p, &mut h);
    }
    for i in 0..n {
        h.push(format!("omega_{i}"));
    }
    xyz("xc1", &mut h);
    xyz("xc2", &mut h);
    for prefix in ["true", "hat"] {
        for s in Slot::ALL {
            xyz(&format!("{prefix}_{}", s.name()), &mut h);
        }
    }
    for i in 0..n {
        h.push(format!("omega_hat_{i}"));
    }
    xyz("theta_r", &mut h);
    xyz("theta_r_dot", &mut h);
    h.push("u_fd".into());
    xyz("torque_d", &mut h);
    for i in 0..n {
        h.push(format!("omega_des_{i}"));
    }
    for f in ["sat_clipped", "negative_clamped", "omega_max_clamped", "envelope_clamped", "offset_active", "landed"] {
        h.push(f.into());
    }
    h
}

/// Writes the records as CSV. The first line is a `#` comment carrying the
/// format version; floats use 17 significant digits.
pub fn write_csv<W: Write>(out: W, records: &[LogRecord], n_rotors: usize) -> csv::Result<()> {
    let mut out = out;
    writeln!(out, "# ehgo-log v{LOG_FORMAT_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(n_rotors))?;
    for r in records {
        let mut row: Vec<String> = r.values().iter().map(|x| format!("{x:.16e}")).collect();
        row.push(r.sat_clipped.to_string());
        for b in [r.negative_clamped, r.omega_max_clamped, r.envelope_clamped, r.offset_active, r.landed] {
            row.push(u8::from(b).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, records: &[LogRecord], n_rotors: usize) -> csv::Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(f, records, n_rotors)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlagCounts {
    /// Controller updates at which at least one estimate was clipped.
    pub saturated_updates: u64,
    pub negative_clamped_updates: u64,
    pub omega_max_clamped_updates: u64,
    pub envelope_clamped_updates: u64,
    pub controller_updates: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockErrors {
    pub sigma_rho: f64,
    pub varsigma: f64,
    pub xc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub log_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub landed: bool,
    pub landing_time: Option<f64>,
    pub offset_removed_time: Option<f64>,
    pub final_time: f64,
    pub steps: u64,
    /// RMS of `|p1 - xc1|` over the final quarter of the run.
    pub tracking_rms_final_quarter: f64,
    pub tracking_max_final_quarter: f64,
    /// RMS estimation errors over the final quarter (components pooled).
    pub estimation_rms_final_quarter: BlockErrors,
    pub flags: FlagCounts,
    pub operating_box_violation: Option<f64>,
    pub error: Option<String>,
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

/// Records in the last quarter of the run.
pub fn final_quarter(records: &[LogRecord]) -> &[LogRecord] {
    let Some(last) = records.last() else { return records };
    let t0 = records[0].t + 0.75 * (last.t - records[0].t);
    let start = records.partition_point(|r| r.t < t0);
    &records[start..]
}

pub fn slot_rms(records: &[LogRecord], slots: &[Slot]) -> f64 {
    rms(records.iter().flat_map(|r| {
        slots.iter().flat_map(move |s| {
            let (a, b) = (r.slot_true(*s), r.slot_hat(*s));
            (0..3).map(move |i| a[i] - b[i])
        })
    }))
}

pub fn tracking_stats(records: &[LogRecord]) -> (f64, f64) {
    let e: Vec<f64> = records.iter().map(LogRecord::tracking_error).collect();
    (rms(e.iter().copied()), e.iter().copied().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: f64) -> LogRecord {
        LogRecord {
            t,
            theta1: [0.1, 0.2, 0.3],
            theta2: [0.0; 3],
            p1: [1.0, 2.0, 3.0],
            p2: [0.0; 3],
            omega: vec![400.0; 6],
            xc1: [1.0, 2.0, 3.0 + t],
            xc2: [0.0; 3],
            chi_true: [0.5; N_EST],
            chi_hat: [0.25; N_EST],
            omega_hat: vec![399.0; 6],
            theta_r: [0.0; 3],
            theta_r_dot: [0.0; 3],
            u_fd: 17.9,
            torque_d: [0.0; 3],
            omega_des: vec![400.0; 6],
            sat_clipped: 2,
            negative_clamped: false,
            omega_max_clamped: true,
            envelope_clamped: false,
            offset_active: true,
            landed: false,
        }
    }

    #[test]
    fn csv_has_fixed_columns_and_round_trips_floats() {
        let recs = vec![record(0.0), record(0.1 + 0.2)];
        let mut buf = Vec::new();
        write_csv(&mut buf, &recs, 6).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# ehgo-log v1");
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(header.len(), csv_header(6).len());
        for line in lines {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols.len(), header.len());
        }
        let row2: Vec<&str> = text.lines().nth(3).unwrap().split(',').collect();
        assert_eq!(row2[0].parse::<f64>().unwrap(), 0.1 + 0.2);
    }

    #[test]
    fn header_layout() {
        let h = csv_header(6);
        assert_eq!(h.len(), 1 + 12 + 6 + 6 + 60 + 6 + 6 + 1 + 3 + 6 + 6);
        assert_eq!(h[0], "t");
        assert!(h.contains(&"hat_varsigma_z".to_string()));
        assert_eq!(h.last().unwrap(), "landed");
    }

    #[test]
    fn statistics() {
        let recs: Vec<LogRecord> = (0..=100).map(|k| record(k as f64 * 0.1)).collect();
        let q = final_quarter(&recs);
        assert!((q[0].t - 7.5).abs() < 1e-9);
        assert!((slot_rms(q, &[Slot::SigmaRho]) - 0.25).abs() < 1e-12);
        let (r, m) = tracking_stats(&recs[..1]);
        assert_eq!((r, m), (0.0, 0.0));
    }
}
