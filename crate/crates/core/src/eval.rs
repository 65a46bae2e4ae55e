//! Velocity integration and the displacement/angle error metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::DT;

/// Norm below which a step velocity has no usable direction.
pub const MIN_SPEED: f64 = 1e-9;

pub const CSV_HEADER: &str = "model,horizon_s,ade_m,fde_m,aae_deg,fae_deg,n";

/// `p_i = p_{i−1} + v_i·Δt` starting from `p0`.
pub fn integrate_velocities(p0: [f64; 2], velocities: &[[f64; 2]], dt: f64) -> Vec<[f64; 2]> {
    let mut p = p0;
    velocities
        .iter()
        .map(|v| {
            p = [p[0] + v[0] * dt, p[1] + v[1] * dt];
            p
        })
        .collect()
}

/// Inverse of [`integrate_velocities`].
pub fn step_velocities(p0: [f64; 2], positions: &[[f64; 2]], dt: f64) -> Vec<[f64; 2]> {
    let mut prev = p0;
    positions
        .iter()
        .map(|p| {
            let v = [(p[0] - prev[0]) / dt, (p[1] - prev[1]) / dt];
            prev = *p;
            v
        })
        .collect()
}

/// Angle from `v_true` to `v_pred` in degrees, `None` if either is (near) zero.
pub fn step_angle(v_true: [f64; 2], v_pred: [f64; 2]) -> Option<f64> {
    let nt = v_true[0].hypot(v_true[1]);
    let np = v_pred[0].hypot(v_pred[1]);
    if nt < MIN_SPEED || np < MIN_SPEED {
        return None;
    }
    let dot = v_true[0] * v_pred[0] + v_true[1] * v_pred[1];
    let cross = v_true[0] * v_pred[1] - v_true[1] * v_pred[0];
    // atan2 stays accurate near 0° and 180°, where acos of the cosine does not
    let theta = cross.atan2(dot).to_degrees();
    Some(if theta == -180.0 { 180.0 } else { theta })
}

/// Signed angle in (−180, 180]; degenerate inputs give 0.
pub fn signed_angle(v_true: [f64; 2], v_pred: [f64; 2]) -> f64 {
    step_angle(v_true, v_pred).unwrap_or(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub predicted: Vec<[f64; 2]>,
    pub truth: Vec<[f64; 2]>,
    pub last: [f64; 2],
}

impl ForecastRecord {
    pub fn new(predicted: Vec<[f64; 2]>, truth: Vec<[f64; 2]>, last: [f64; 2]) -> Result<Self> {
        if predicted.len() != truth.len() || predicted.is_empty() {
            return Err(Error::dim(
                "forecast_record",
                format!("{} predicted vs {} true steps", predicted.len(), truth.len()),
            ));
        }
        let finite = |p: &[f64; 2]| p[0].is_finite() && p[1].is_finite();
        if !predicted.iter().chain(&truth).all(finite) || !finite(&last) {
            return Err(Error::Numeric("forecast record holds a non-finite coordinate".into()));
        }
        Ok(ForecastRecord { predicted, truth, last })
    }

    pub fn steps(&self) -> usize {
        self.truth.len()
    }

    /// `t_i = i·Δt` for `i = 1..=P`.
    pub fn horizons(&self) -> Vec<f64> {
        (1..=self.steps()).map(|i| i as f64 * DT).collect()
    }

    pub fn displacement(&self, t: usize) -> f64 {
        let (p, y) = (self.predicted[t], self.truth[t]);
        (p[0] - y[0]).hypot(p[1] - y[1])
    }

    /// Per-step signed angles between true and predicted step velocities.
    pub fn angles(&self) -> Vec<Option<f64>> {
        let vt = step_velocities(self.last, &self.truth, DT);
        let vp = step_velocities(self.last, &self.predicted, DT);
        vt.into_iter().zip(vp).map(|(a, b)| step_angle(a, b)).collect()
    }
}

fn check(records: &[ForecastRecord]) -> Result<usize> {
    let first = records
        .first()
        .ok_or_else(|| Error::Parameter("metrics need at least one record".into()))?;
    let p = first.steps();
    if let Some(r) = records.iter().find(|r| r.steps() != p) {
        return Err(Error::dim("metrics", format!("records of {} and {p} steps", r.steps())));
    }
    Ok(p)
}

fn mean_or_zero(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn ade(records: &[ForecastRecord]) -> Result<f64> {
    let p = check(records)?;
    let sum: f64 = records.iter().map(|r| (0..p).map(|t| r.displacement(t)).sum::<f64>()).sum();
    Ok(sum / (records.len() * p) as f64)
}

pub fn fde(records: &[ForecastRecord]) -> Result<f64> {
    let p = check(records)?;
    let sum: f64 = records.iter().map(|r| r.displacement(p - 1)).sum();
    Ok(sum / records.len() as f64)
}

/// Mean absolute angle over all steps; degenerate steps are left out.
pub fn aae(records: &[ForecastRecord]) -> Result<f64> {
    check(records)?;
    let (mut sum, mut n) = (0.0, 0);
    for a in records.iter().flat_map(|r| r.angles()).flatten() {
        sum += a.abs();
        n += 1;
    }
    Ok(mean_or_zero(sum, n))
}

/// Mean absolute angle at the final step; degenerate steps are left out.
pub fn fae(records: &[ForecastRecord]) -> Result<f64> {
    let p = check(records)?;
    let (mut sum, mut n) = (0.0, 0);
    for a in records.iter().filter_map(|r| r.angles()[p - 1]) {
        sum += a.abs();
        n += 1;
    }
    Ok(mean_or_zero(sum, n))
}

/// Metrics for every horizon `k = 1..=P`, each computed as if the forecast
/// stopped at step `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub ade: Vec<f64>,
    pub fde: Vec<f64>,
    pub aae: Vec<f64>,
    pub fae: Vec<f64>,
    pub n: usize,
    /// Steps excluded from the angle averages for lack of a direction.
    pub degenerate_steps: usize,
}

impl MetricReport {
    pub fn from_records(model: impl Into<String>, records: &[ForecastRecord]) -> Result<Self> {
        let p = check(records)?;
        let disp: Vec<Vec<f64>> = records.iter().map(|r| (0..p).map(|t| r.displacement(t)).collect()).collect();
        let angles: Vec<Vec<Option<f64>>> = records.iter().map(|r| r.angles()).collect();
        let n = records.len();
        let mut report = MetricReport {
            model: model.into(),
            ade: Vec::with_capacity(p),
            fde: Vec::with_capacity(p),
            aae: Vec::with_capacity(p),
            fae: Vec::with_capacity(p),
            n,
            degenerate_steps: angles.iter().flatten().filter(|a| a.is_none()).count(),
        };
        for k in 1..=p {
            let sum: f64 = disp.iter().map(|d| d[..k].iter().sum::<f64>()).sum();
            report.ade.push(sum / (n * k) as f64);
            report.fde.push(disp.iter().map(|d| d[k - 1]).sum::<f64>() / n as f64);
            let (mut s, mut c) = (0.0, 0);
            for a in angles.iter().flat_map(|a| a[..k].iter()).flatten() {
                s += a.abs();
                c += 1;
            }
            report.aae.push(mean_or_zero(s, c));
            let (mut s, mut c) = (0.0, 0);
            for a in angles.iter().filter_map(|a| a[k - 1]) {
                s += a.abs();
                c += 1;
            }
            report.fae.push(mean_or_zero(s, c));
        }
        Ok(report)
    }

    pub fn steps(&self) -> usize {
        self.fde.len()
    }

    /// 1-based step index of horizon `seconds`, if it is on the grid.
    pub fn step_for(&self, seconds: f64) -> Option<usize> {
        let k = (seconds / DT).round();
        ((k * DT - seconds).abs() < 1e-9 && k >= 1.0 && k as usize <= self.steps()).then_some(k as usize)
    }

    pub fn csv_row(&self, step: usize) -> String {
        let i = step - 1;
        format!(
            "{},{:.2},{:.6},{:.6},{:.6},{:.6},{}",
            self.model,
            step as f64 * DT,
            self.ade[i],
            self.fde[i],
            self.aae[i],
            self.fae[i],
            self.n
        )
    }
}

/// Writes the header plus one row per (report, step). `steps` of `None`
/// means every step of every report.
pub fn write_csv<W: Write>(out: &mut W, reports: &[MetricReport], steps: Option<&[usize]>) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in reports {
        let all: Vec<usize> = (1..=r.steps()).collect();
        for &k in steps.unwrap_or(&all) {
            if k == 0 || k > r.steps() {
                return Err(Error::Parameter(format!("step {k} outside 1..={}", r.steps())));
            }
            writeln!(out, "{}", r.csv_row(k))?;
        }
    }
    Ok(())
}
