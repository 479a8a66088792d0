//! Text-only SVG rendering on a fixed 800×600 canvas.

use std::fmt::Write as _;

use super::PhaseGrid;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;

const LEFT: f64 = 90.0;
const RIGHT: f64 = 40.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 70.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#000000", "#2ca02c", "#9467bd", "#ff7f0e"];

/// One named polyline.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="13">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    )
    .unwrap();
}

fn axis_labels(out: &mut String, x_label: &str, y_label: &str) {
    writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        HEIGHT - 20.0,
        escape(x_label)
    )
    .unwrap();
    let cy = TOP + (HEIGHT - TOP - BOTTOM) / 2.0;
    writeln!(
        out,
        r#"<text x="24" y="{cy}" text-anchor="middle" transform="rotate(-90 24 {cy})">{}</text>"#,
        escape(y_label)
    )
    .unwrap();
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Success-rate heatmap: columns are N, rows are axis1 (smallest at the
/// bottom), black = rate 0 and white = rate 1.
pub fn heatmap_svg(grid: &PhaseGrid, title: &str) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let (nx, ny) = (grid.axis2.len(), grid.axis1.len());
    let cw = (WIDTH - LEFT - RIGHT) / nx as f64;
    let ch = (HEIGHT - TOP - BOTTOM) / ny as f64;
    for i1 in 0..ny {
        let y = TOP + (ny - 1 - i1) as f64 * ch;
        for i2 in 0..nx {
            let shade = (grid.rate(i1, i2) * 255.0).round() as u8;
            writeln!(
                out,
                r#"<rect x="{:.2}" y="{y:.2}" width="{cw:.2}" height="{ch:.2}" fill="rgb({shade},{shade},{shade})" stroke="gray" stroke-width="0.5"/>"#,
                LEFT + i2 as f64 * cw
            )
            .unwrap();
        }
        writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + ch / 2.0 + 4.0,
            fmt_tick(grid.axis1[i1])
        )
        .unwrap();
    }
    for (i2, n) in grid.axis2.iter().enumerate() {
        writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{n}</text>"#,
            LEFT + (i2 as f64 + 0.5) * cw,
            HEIGHT - BOTTOM + 18.0
        )
        .unwrap();
    }
    axis_labels(&mut out, "N (training samples)", grid.axis.name());
    out.push_str("</svg>\n");
    out
}

/// Polyline chart with linear axes. Non-finite points are skipped.
pub fn line_chart_svg(series: &[Series], title: &str, x_label: &str, y_label: &str) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let finite = || {
        series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|(x, y)| x.is_finite() && y.is_finite())
    };
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in finite() {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;
    writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            sx(fx),
            TOP + ph + 18.0,
            fmt_tick(fx)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            sy(fy) + 4.0,
            fmt_tick(fy)
        )
        .unwrap();
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        )
        .unwrap();
        let ly = TOP + 16.0 + 18.0 * i as f64;
        writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            WIDTH - RIGHT - 170.0,
            WIDTH - RIGHT - 145.0,
            WIDTH - RIGHT - 140.0,
            ly + 4.0,
            escape(&s.name)
        )
        .unwrap();
    }
    axis_labels(&mut out, x_label, y_label);
    out.push_str("</svg>\n");
    out
}
