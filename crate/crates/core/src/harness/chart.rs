//! Mean curves with ±1 sd bands as a standalone SVG.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use super::run::{mean_sd, SweepRow};
use crate::error::{Error, Result};
use crate::trace::RegretTrace;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const MAX_POINTS: usize = 400;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Axis labels and title.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartLabels {
    pub title: String,
    pub x: String,
    pub y: String,
}

impl ChartLabels {
    pub fn regret_curve(title: &str) -> Self {
        ChartLabels {
            title: title.to_string(),
            x: "round t".into(),
            y: "cumulative regret".into(),
        }
    }

    pub fn omega_sweep(title: &str) -> Self {
        ChartLabels {
            title: title.to_string(),
            x: "omega_r".into(),
            y: "cumulative regret at T".into(),
        }
    }
}

/// Groups traces by algorithm and averages them round by round.
pub fn series_from_traces(traces: &[RegretTrace]) -> Vec<Series> {
    let mut groups: BTreeMap<&str, Vec<&RegretTrace>> = BTreeMap::new();
    for t in traces {
        groups.entry(t.algo.as_str()).or_default().push(t);
    }
    groups
        .into_iter()
        .map(|(label, ts)| {
            let len = ts.iter().map(|t| t.len()).min().unwrap_or(0);
            let (mean, sd) = (0..len)
                .map(|i| mean_sd(&ts.iter().map(|t| t.cumulative[i]).collect::<Vec<_>>()))
                .unzip();
            Series {
                label: label.to_string(),
                x: (1..=len).map(|t| t as f64).collect(),
                mean,
                sd,
            }
        })
        .collect()
}

/// One series over `ω_r`, sorted by `ω_r`.
pub fn series_from_sweep(label: &str, rows: &[SweepRow]) -> Series {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| a.omega_r.total_cmp(&b.omega_r));
    Series {
        label: label.to_string(),
        x: rows.iter().map(|r| r.omega_r).collect(),
        mean: rows.iter().map(|r| r.mean).collect(),
        sd: rows.iter().map(|r| r.sd).collect(),
    }
}

fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let k = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    k * mag
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn finite(v: impl Iterator<Item = f64>) -> impl Iterator<Item = f64> {
    v.filter(|x| x.is_finite())
}

/// Renders the series; output depends only on the input.
pub fn emit_chart(series: &[Series], labels: &ChartLabels) -> String {
    let xs = || finite(series.iter().flat_map(|s| s.x.iter().copied()));
    let (mut x_lo, mut x_hi) = (
        xs().fold(f64::INFINITY, f64::min),
        xs().fold(f64::NEG_INFINITY, f64::max),
    );
    if !x_lo.is_finite() {
        (x_lo, x_hi) = (0.0, 1.0);
    }
    if x_lo > 0.0 && x_lo <= 0.2 * x_hi {
        x_lo = 0.0;
    }
    if x_hi <= x_lo {
        x_hi = x_lo + 1.0;
    }
    let bands = || {
        finite(
            series
                .iter()
                .flat_map(|s| s.mean.iter().zip(&s.sd).flat_map(|(m, d)| [m - d, m + d])),
        )
    };
    let y_hi = bands().fold(0.0, f64::max);
    let y_lo = bands().fold(0.0, f64::min);
    let y_step = if y_hi - y_lo > 0.0 {
        nice_step(y_hi - y_lo)
    } else {
        0.2
    };
    let y_top = (y_hi / y_step).ceil().max(1.0) * y_step;
    let y_bot = (y_lo / y_step).floor() * y_step;
    let x_step = nice_step(x_hi - x_lo);

    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + pw * (x - x_lo) / (x_hi - x_lo);
    let sy = |v: f64| TOP + ph * (1.0 - (v - y_bot) / (y_top - y_bot));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&labels.title)
    );

    let n_y = ((y_top - y_bot) / y_step).round() as usize;
    for k in 0..=n_y {
        let y = y_bot + k as f64 * y_step;
        let py = sy(y);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e0e0e0"/>"##,
            LEFT + pw
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py + 4.0,
            fmt_tick(y)
        );
    }
    let first = (x_lo / x_step).ceil() as i64;
    let last = (x_hi / x_step + 1e-9).floor() as i64;
    for k in first..=last {
        let x = k as f64 * x_step;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            sx(x),
            TOP + ph + 16.0,
            fmt_tick(x)
        );
    }
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT} {TOP}V{:.2}H{:.2}" fill="none" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0,
        escape(&labels.x)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&labels.y)
    );

    // Curves are drawn in data coordinates under one affine map, so band vertices
    // in the file are exactly mean ± sd.
    let ax = pw / (x_hi - x_lo);
    let dy = -ph / (y_top - y_bot);
    let _ = writeln!(
        s,
        r#"<g transform="matrix({ax} 0 0 {dy} {} {})">"#,
        LEFT - ax * x_lo,
        TOP + ph - dy * y_bot
    );
    let mut legend = String::new();
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let n = ser.mean.len().min(ser.x.len()).min(ser.sd.len());
        if n == 0 {
            continue;
        }
        let stride = n.div_ceil(MAX_POINTS).max(1);
        let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
        if *idx.last().unwrap() != n - 1 {
            idx.push(n - 1);
        }
        let pt = |i: usize, v: f64| format!("{},{}", ser.x[i], v);
        let upper: Vec<String> = idx
            .iter()
            .map(|&i| pt(i, ser.mean[i] + ser.sd[i]))
            .collect();
        let lower: Vec<String> = idx
            .iter()
            .rev()
            .map(|&i| pt(i, ser.mean[i] - ser.sd[i]))
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon class="band" points="{} {}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = idx.iter().map(|&i| pt(i, ser.mean[i])).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="1.8" vector-effect="non-scaling-stroke"/>"#,
            line.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * k as f64;
        let lx = LEFT + pw + 14.0;
        let _ = writeln!(
            legend,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#,
            lx + 22.0
        );
        let _ = writeln!(
            legend,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 28.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</g>\n");
    s.push_str(&legend);
    s.push_str("</svg>\n");
    s
}

/// Writes [`emit_chart`] output to `path`.
pub fn write_chart(path: &Path, series: &[Series], labels: &ChartLabels) -> Result<()> {
    if series.is_empty() {
        return Err(Error::Config("chart needs at least one series".into()));
    }
    std::fs::write(path, emit_chart(series, labels)).map_err(|e| Error::io(path, e))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
