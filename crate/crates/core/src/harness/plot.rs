//! Minimal SVG line charts and histograms.

use std::fmt::Write as _;

use super::sweep::{ols_intercept, ols_slope};

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{y}" x2="{x}" y2="{y}" stroke="black"/><line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{y}" stroke="black"/>"#,
        x = W - MARGIN,
        y = H - MARGIN
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
}

struct Scale {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Scale {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0).max(1e-12) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0).max(1e-12) * (H - 2.0 * MARGIN)
    }
}

fn ticks(out: &mut String, s: &Scale, xs: &[f64], ys: &[f64]) {
    for &x in xs {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{}</text>"#,
            s.px(x),
            H - MARGIN + 14.0,
            x
        );
    }
    for &y in ys {
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{y:.2}</text>"#, MARGIN - 4.0, s.py(y) + 3.0);
    }
}

/// Polylines with markers and a dashed least-squares trendline per series.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let mut out = String::new();
    frame(&mut out, title, xlabel, ylabel);
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let (x0, x1) = xs.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
    let (x0, x1) = if xs.is_empty() { (0.0, 1.0) } else { (x0, x1) };
    let s = Scale { x0, x1, y0: 0.0, y1: 1.0 };
    let mut xt: Vec<f64> = xs.clone();
    xt.sort_by(f64::total_cmp);
    xt.dedup();
    ticks(&mut out, &s, &xt, &[0.0, 0.25, 0.5, 0.75, 1.0]);
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", s.px(x), s.py(y))).collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for &(x, y) in &ser.points {
            let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, s.px(x), s.py(y));
        }
        if let Some(m) = ols_slope(&ser.points) {
            let b = ols_intercept(&ser.points, m);
            let _ = writeln!(
                out,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-dasharray="5,4"/>"#,
                s.px(x0),
                s.py(b + m * x0),
                s.px(x1),
                s.py(b + m * x1)
            );
        }
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="11" fill="{color}">{}</text>"#,
            W - MARGIN - 150.0,
            escape(&ser.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Bin counts of values in `[0, 1]` with the given width; 1.0 lands in the last bin.
pub fn histogram_counts(values: &[f64], bin_width: f64) -> Vec<usize> {
    let bins = (1.0 / bin_width).round() as usize;
    let mut counts = vec![0; bins];
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) / bin_width).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

/// Side-by-side bars of one histogram per series over `[0, 1]`.
pub fn histogram_chart(title: &str, xlabel: &str, series: &[(String, Vec<usize>)], bin_width: f64) -> String {
    let mut out = String::new();
    frame(&mut out, title, xlabel, "count");
    let ymax = series.iter().flat_map(|s| s.1.iter()).copied().max().unwrap_or(1).max(1) as f64;
    let s = Scale { x0: 0.0, x1: 1.0, y0: 0.0, y1: ymax };
    ticks(&mut out, &s, &[0.0, 0.25, 0.5, 0.75, 1.0], &[0.0, ymax]);
    let k = series.len().max(1) as f64;
    for (i, (label, counts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        for (b, &c) in counts.iter().enumerate() {
            let left = s.px(b as f64 * bin_width) + i as f64 * (s.px(bin_width) - s.px(0.0)) / k;
            let width = (s.px(bin_width) - s.px(0.0)) / k;
            let top = s.py(c as f64);
            let _ = writeln!(
                out,
                r#"<rect x="{left:.1}" y="{top:.1}" width="{width:.1}" height="{:.1}" fill="{color}" fill-opacity="0.8"/>"#,
                s.py(0.0) - top
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" fill="{color}">{}</text>"#,
            MARGIN + 10.0,
            MARGIN + 16.0 * i as f64,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}
