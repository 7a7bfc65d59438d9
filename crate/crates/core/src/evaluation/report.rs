//! Report serialization: JSON, per-sequence CSV summaries, and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::{success_threshold, EvalReport, PRECISION_REPORT_THRESHOLD};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::InvalidArgument(format!("unknown report format {other:?}"))),
        }
    }
}

/// One line per sequence plus a final `mean` line.
pub fn csv_summary(report: &EvalReport) -> String {
    let mut out = String::from("sequence,frames,precision_at_20,auc,mean_iou\n");
    for s in &report.sequences {
        let _ = writeln!(out, "{},{},{:.6},{:.6},{:.6}", s.name, s.frames, s.precision_at_20, s.auc, s.mean_iou);
    }
    if let Some(a) = &report.overall {
        let frames: usize = report.sequences.iter().map(|s| s.frames).sum();
        let _ = writeln!(out, "mean,{frames},{:.6},{:.6},{:.6}", a.precision_at_20, a.auc, a.mean_iou);
    }
    out
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

struct Panel<'a> {
    title: &'a str,
    x_label: &'a str,
    x_max: f64,
    x_of: &'a dyn Fn(usize) -> f64,
}

fn panel(out: &mut String, origin_x: f64, p: &Panel<'_>, series: &[(String, &[f64])]) {
    let (w, h, left, top) = (360.0, 260.0, 50.0, 30.0);
    let x0 = origin_x + left;
    let y0 = top + h;
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="18" font-size="14" text-anchor="middle">{}</text>"#,
        x0 + w / 2.0,
        p.title
    );
    let _ = writeln!(
        out,
        r#"<rect x="{x0:.1}" y="{top:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="dimgray"/>"#
    );
    for k in 0..=5 {
        let frac = k as f64 / 5.0;
        let gy = y0 - frac * h;
        let gx = x0 + frac * w;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{frac:.1}</text>"#,
            x0 - 4.0,
            gy + 3.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{gx:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
            y0 + 14.0,
            format_tick(frac * p.x_max)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
        x0 + w / 2.0,
        y0 + 30.0,
        p.x_label
    );
    for (i, (label, values)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(k, v)| format!("{:.2},{:.2}", x0 + (p.x_of)(k) / p.x_max * w, y0 - v.clamp(0.0, 1.0) * h))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="10" fill="{color}">{}</text>"#,
            x0 + 8.0,
            escape(label)
        );
    }
}

fn format_tick(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Precision and success plots of the mean curves of each labelled report.
pub fn svg_plots(reports: &[(&str, &EvalReport)]) -> String {
    let mut prec = Vec::new();
    let mut succ = Vec::new();
    for (label, r) in reports {
        if let Some(a) = &r.overall {
            prec.push((format!("{label} [{:.3}]", a.precision_at_20), a.precision.as_slice()));
            succ.push((format!("{label} [{:.3}]", a.auc), a.success.as_slice()));
        }
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="880" height="340" viewBox="0 0 880 340" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="880" height="340" fill="white"/>"#);
    let precision_title = format!("Precision (legend: @{PRECISION_REPORT_THRESHOLD}px)");
    panel(
        &mut out,
        0.0,
        &Panel {
            title: &precision_title,
            x_label: "center error threshold (px)",
            x_max: 50.0,
            x_of: &|k| k as f64,
        },
        &prec,
    );
    panel(
        &mut out,
        440.0,
        &Panel {
            title: "Success (legend: AUC)",
            x_label: "overlap threshold",
            x_max: 1.0,
            x_of: &success_threshold,
        },
        &succ,
    );
    out.push_str("</svg>\n");
    out
}

/// Pretty-printed JSON of any report value, newline-terminated.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes `report` to `path` in the given format.
pub fn write_report(report: &EvalReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let body = match format {
        ReportFormat::Json => to_json(report)?,
        ReportFormat::Csv => csv_summary(report),
        ReportFormat::Svg => svg_plots(&[("tracker", report)]),
    };
    let path = path.as_ref();
    fs::write(path, body).map_err(|e| Error::io(path, e))
}
