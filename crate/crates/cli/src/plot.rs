//! Static SVG line plots rendered straight from the data that lands in the
//! CSVs. No styling knobs; every run with the same data produces identical
//! bytes.

use std::fmt::Write as _;

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 60.0;

/// Render series as polylines with markers. `log_log` maps both axes through
/// log10 before scaling (all coordinates must then be positive).
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], log_log: bool) -> String {
    let tf = |v: f64| if log_log { v.log10() } else { v };
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            xs.push(tf(x));
            ys.push(tf(y));
        }
    }
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let sx = |x: f64| MARGIN + (tf(x) - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (tf(y) - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = write!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        svg,
        r#"<text x="{}" y="24" font-family="monospace" font-size="15" text-anchor="middle">{}</text>"#,
        W / 2.0,
        title
    );
    // axes
    let _ = write!(
        svg,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    );
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" font-family="monospace" font-size="12" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 16.0,
        x_label
    );
    let _ = write!(
        svg,
        r#"<text x="18" y="{}" font-family="monospace" font-size="12" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        y_label
    );
    // extremal tick labels
    for (v, px) in [(x0, MARGIN), (x1, W - MARGIN)] {
        let shown = if log_log { 10f64.powf(v) } else { v };
        let _ = write!(
            svg,
            r#"<text x="{px}" y="{}" font-family="monospace" font-size="10" text-anchor="middle">{shown:.3}</text>"#,
            H - MARGIN + 16.0
        );
    }
    for (v, py) in [(y0, H - MARGIN), (y1, MARGIN)] {
        let shown = if log_log { 10f64.powf(v) } else { v };
        let _ = write!(
            svg,
            r#"<text x="{}" y="{py}" font-family="monospace" font-size="10" text-anchor="end">{shown:.4}</text>"#,
            MARGIN - 6.0
        );
    }
    for (si, s) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = write!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = write!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-family="monospace" font-size="12" fill="{color}">{}</text>"#,
            W - MARGIN - 150.0,
            MARGIN + 16.0 * si as f64 + 4.0,
            s.name
        );
    }
    svg.push_str("</svg>");
    svg
}

fn span(vals: &[f64]) -> (f64, f64) {
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if (hi - lo).abs() < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}
