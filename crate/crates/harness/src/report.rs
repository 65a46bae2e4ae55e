//! CSV tables, SVG curve plots and the JSON run summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use courtcast::eval::{write_csv, MetricReport};
use courtcast::DT;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ade,
    Fde,
    Aae,
    Fae,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Ade, Metric::Fde, Metric::Aae, Metric::Fae];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ade => "ade",
            Metric::Fde => "fde",
            Metric::Aae => "aae",
            Metric::Fae => "fae",
        }
    }

    fn unit(self) -> &'static str {
        match self {
            Metric::Ade | Metric::Fde => "m",
            Metric::Aae | Metric::Fae => "deg",
        }
    }

    pub fn curve(self, r: &MetricReport) -> &[f64] {
        match self {
            Metric::Ade => &r.ade,
            Metric::Fde => &r.fde,
            Metric::Aae => &r.aae,
            Metric::Fae => &r.fae,
        }
    }
}

/// Fails early if `dir` cannot be created or written.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| HarnessError::io(dir, e))?;
    fs::remove_file(&probe).map_err(|e| HarnessError::io(&probe, e))
}

/// Steps matching `seconds`, skipping horizons a report does not reach.
pub fn table_steps(horizons_s: &[f64], steps: usize) -> Vec<usize> {
    let mut out: Vec<usize> = horizons_s
        .iter()
        .map(|s| (s / DT).round() as usize)
        .filter(|&k| k >= 1 && k <= steps)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

pub fn csv_string(reports: &[MetricReport], steps: Option<&[usize]>) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, reports, steps)?;
    Ok(String::from_utf8(buf).expect("csv is utf-8"))
}

/// Writes `report.csv` (table horizons), `curves.csv` (every step) and one
/// SVG per metric family. Returns the written paths.
pub fn emit_reports(
    reports: &[MetricReport],
    dir: &Path,
    horizons_s: &[f64],
    families: &[Metric],
    title: &str,
) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(HarnessError::Invalid("no reports to emit".into()));
    }
    ensure_writable(dir)?;
    let steps = reports.iter().map(|r| r.steps()).min().unwrap_or(0);
    let table = table_steps(horizons_s, steps);
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    put("report.csv".into(), csv_string(reports, Some(&table))?)?;
    put("curves.csv".into(), csv_string(reports, None)?)?;
    for &m in families {
        put(format!("{}.svg", m.name()), svg_plot(reports, m, title))?;
    }
    Ok(written)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("summary serializes");
    fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Error-vs-horizon line plot, one line per report.
pub fn svg_plot(reports: &[MetricReport], metric: Metric, title: &str) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 30.0, 45.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let max_steps = reports.iter().map(|r| r.steps()).max().unwrap_or(1).max(1);
    let x_max = max_steps as f64 * DT;
    let y_max = reports
        .iter()
        .flat_map(|r| metric.curve(r).iter().copied())
        .fold(0.0f64, f64::max);
    let y_max = if y_max > 0.0 { nice_ceiling(y_max) } else { 1.0 };
    let sx = |x: f64| left + pw * x / x_max;
    let sy = |y: f64| top + ph * (1.0 - y / y_max);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">{} {}</text>"#,
        left + pw / 2.0,
        escape(title),
        metric.name().to_uppercase()
    );
    let _ = writeln!(
        s,
        r#"<path d="M{left:.1},{top:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for i in 0..=5 {
        let yv = y_max * i as f64 / 5.0;
        let y = sy(yv);
        let _ = writeln!(
            s,
            r##"<line x1="{left:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.2}</text>"##,
            left + pw,
            left - 5.0,
            y + 4.0
        );
        let xv = x_max * i as f64 / 5.0;
        let x = sx(xv);
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{xv:.2}</text>"#,
            top + ph + 15.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">horizon (s)</text>"#,
        left + pw / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{} ({})</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        metric.name().to_uppercase(),
        metric.unit()
    );
    for (i, r) in reports.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = metric
            .curve(r)
            .iter()
            .enumerate()
            .map(|(k, &v)| format!("{:.1},{:.1}", sx((k + 1) as f64 * DT), sy(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            points.join(" ")
        );
        let ly = top + 12.0 + 16.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&r.model)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn nice_ceiling(v: f64) -> f64 {
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&c| c >= v)
        .unwrap_or(10.0 * mag)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
