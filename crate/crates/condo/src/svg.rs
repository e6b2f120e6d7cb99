//! Minimal static SVG scatter plots, one color per series.

use std::fmt::Write as _;

pub struct ScatterSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"];

/// Renders a scatter plot of the series into an SVG document string.
pub fn scatter_svg(series: &[ScatterSeries], title: &str) -> String {
    let all: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .collect();
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for (x, y) in &all {
        xmin = xmin.min(*x);
        xmax = xmax.max(*x);
        ymin = ymin.min(*y);
        ymax = ymax.max(*y);
    }
    if all.is_empty() {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: &mut f64, hi: &mut f64| {
        let span = (*hi - *lo).abs().max(1e-9);
        *lo -= 0.05 * span;
        *hi += 0.05 * span;
    };
    pad(&mut xmin, &mut xmax);
    pad(&mut ymin, &mut ymax);

    let sx = |x: f64| MARGIN + (x - xmin) / (xmax - xmin) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - ymin) / (ymax - ymin) * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r##"<rect x="{m}" y="{m}" width="{w}" height="{h}" fill="none" stroke="#444"/>"##,
        m = MARGIN,
        w = WIDTH - 2.0 * MARGIN,
        h = HEIGHT - 2.0 * MARGIN
    );
    let _ = writeln!(
        out,
        r#"<text x="{x}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>"#,
        x = WIDTH / 2.0
    );
    for (tick, anchor, x, y) in [
        (xmin, "start", MARGIN, HEIGHT - MARGIN + 16.0),
        (xmax, "end", WIDTH - MARGIN, HEIGHT - MARGIN + 16.0),
        (ymin, "end", MARGIN - 6.0, HEIGHT - MARGIN),
        (ymax, "end", MARGIN - 6.0, MARGIN + 4.0),
    ] {
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-family="sans-serif" font-size="10">{tick:.3}</text>"#
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        for (x, y) in &s.points {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}" fill-opacity="0.6"/>"#,
                sx(*x),
                sy(*y)
            );
        }
        let ly = MARGIN + 16.0 * i as f64 + 12.0;
        let _ = writeln!(
            out,
            r#"<circle cx="{x}" cy="{ly}" r="4" fill="{color}"/><text x="{tx}" y="{ty}" font-family="sans-serif" font-size="11">{label}</text>"#,
            x = WIDTH - MARGIN - 110.0,
            tx = WIDTH - MARGIN - 100.0,
            ty = ly + 4.0,
            label = s.label
        );
    }
    out.push_str("</svg>\n");
    out
}
