//! Minimal deterministic SVG line plots laid out as small multiples.

use std::fmt::Write;

/// One panel: a title and one or more `(x, y)` polylines.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub title: String,
    pub series: Vec<Vec<(f64, f64)>>,
}

const PANEL_W: f64 = 180.0;
const PANEL_H: f64 = 130.0;
const PAD: f64 = 24.0;
const COLUMNS: usize = 4;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Renders `panels` on a shared y-range so curves are comparable across
/// panels. Non-finite points are skipped.
pub fn small_multiples(title: &str, panels: &[Panel]) -> String {
    let pts = || {
        panels
            .iter()
            .flat_map(|p| p.series.iter().flatten())
            .filter(|(x, y)| x.is_finite() && y.is_finite())
    };
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts() {
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

    let cols = COLUMNS.min(panels.len().max(1));
    let rows = panels.len().div_ceil(cols).max(1);
    let width = cols as f64 * PANEL_W;
    let height = rows as f64 * PANEL_H + PAD;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(out, r#"<text x="4" y="14" font-size="12">{}</text>"#, escape(title));
    let _ = writeln!(
        out,
        r#"<text x="{}" y="14" text-anchor="end">y ∈ [{}, {}]</text>"#,
        width - 4.0,
        short(y0),
        short(y1)
    );
    for (k, panel) in panels.iter().enumerate() {
        let ox = (k % cols) as f64 * PANEL_W;
        let oy = PAD + (k / cols) as f64 * PANEL_H;
        let (iw, ih) = (PANEL_W - 2.0 * 8.0, PANEL_H - 8.0 - 18.0);
        let (ix, iy) = (ox + 8.0, oy + 18.0);
        let _ = writeln!(
            out,
            r##"<rect x="{ix}" y="{iy}" width="{iw}" height="{ih}" fill="none" stroke="#999"/>"##
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}">{}</text>"#,
            ix,
            oy + 13.0,
            escape(&panel.title)
        );
        if y0 < 0.0 && y1 > 0.0 {
            let zy = iy + ih * (1.0 - (0.0 - y0) / (y1 - y0));
            let _ = writeln!(
                out,
                r##"<line x1="{ix}" y1="{zy:.2}" x2="{}" y2="{zy:.2}" stroke="#ccc" stroke-dasharray="2,2"/>"##,
                ix + iw
            );
        }
        for (s, series) in panel.series.iter().enumerate() {
            let coords: Vec<String> = series
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| {
                    let px = ix + iw * (x - x0) / (x1 - x0);
                    let py = iy + ih * (1.0 - (y - y0) / (y1 - y0));
                    format!("{px:.2},{py:.2}")
                })
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
                COLORS[s % COLORS.len()],
                coords.join(" ")
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

fn short(v: f64) -> String {
    format!("{v:.4}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
