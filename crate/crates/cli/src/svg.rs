//! Minimal SVG plots for quick inspection of outputs.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let mut b = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in series.iter().flat_map(|s| &s.points) {
        if x.is_finite() && y.is_finite() {
            b = (b.0.min(x), b.1.max(x), b.2.min(y), b.3.max(y));
        }
    }
    if !b.0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if b.1 - b.0 <= 0.0 {
        b = (b.0 - 0.5, b.1 + 0.5, b.2, b.3);
    }
    if b.3 - b.2 <= 0.0 {
        b = (b.0, b.1, b.2 - 0.5, b.3 + 0.5);
    }
    b
}

fn frame(out: &mut String, title: &str, xlabel: &str, ylabel: &str, b: (f64, f64, f64, f64)) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="25" text-anchor="middle">{title}</text>"#,
        WIDTH / 2.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{ylabel}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{}">{:.3e}</text>"#,
        HEIGHT - MARGIN + 15.0,
        b.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end">{:.3e}</text>"#,
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 15.0,
        b.1
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end">{:.3e}</text>"#,
        MARGIN - 4.0,
        HEIGHT - MARGIN,
        b.2
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end">{:.3e}</text>"#,
        MARGIN - 4.0,
        MARGIN + 10.0,
        b.3
    );
}

fn project(b: (f64, f64, f64, f64), x: f64, y: f64) -> (f64, f64) {
    let px = MARGIN + (x - b.0) / (b.1 - b.0) * (WIDTH - 2.0 * MARGIN);
    let py = HEIGHT - MARGIN - (y - b.2) / (b.3 - b.2) * (HEIGHT - 2.0 * MARGIN);
    (px, py)
}

pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let b = bounds(series);
    let mut out = String::new();
    frame(&mut out, title, xlabel, ylabel, b);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| {
                let (px, py) = project(b, x, y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            pts.join(" ")
        );
        if series.len() <= PALETTE.len() {
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
                WIDTH - MARGIN - 150.0,
                MARGIN + 15.0 + 14.0 * i as f64,
                s.label
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Filled cells for a categorical grid map; `color_of` picks each fill.
pub fn cell_plot<T>(
    title: &str,
    cells: impl Iterator<Item = (f64, f64, T)>,
    cell_size: (f64, f64),
    bounds: (f64, f64, f64, f64),
    color_of: impl Fn(&T) -> &'static str,
) -> String {
    let mut out = String::new();
    frame(&mut out, title, "x1", "x2", bounds);
    let (w, h) = (
        cell_size.0 / (bounds.1 - bounds.0) * (WIDTH - 2.0 * MARGIN),
        cell_size.1 / (bounds.3 - bounds.2) * (HEIGHT - 2.0 * MARGIN),
    );
    for (x, y, v) in cells {
        let (px, py) = project(bounds, x, y);
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            px - w / 2.0,
            py - h / 2.0,
            w,
            h,
            color_of(&v)
        );
    }
    out.push_str("</svg>\n");
    out
}
