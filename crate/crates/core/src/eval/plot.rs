//! Minimal SVG line charts of a metric against cumulative budget.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::metrics::{AGGREGATE_HEADER, METRICS_HEADER};
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 45.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    /// (x, y, half-width of the band around y)
    pub points: Vec<(f64, f64, f64)>,
}

impl Curve {
    /// Reads `column` against `budget_total` from a metrics or aggregate
    /// CSV. Aggregate files contribute the mean with a one-std band. Rows
    /// where the column is empty are skipped.
    pub fn from_csv(path: &Path, column: &str, label: impl Into<String>) -> Result<Curve> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let cols: Vec<&str> = header.split(',').collect();
        let find = |name: &str| {
            cols.iter().position(|c| *c == name).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                message: format!("line 1: no column {name:?}"),
            })
        };
        let (xi, yi, bi) = if header == AGGREGATE_HEADER {
            (
                find("budget_total_mean")?,
                find(&format!("{column}_mean"))?,
                Some(find(&format!("{column}_std"))?),
            )
        } else if header == METRICS_HEADER {
            (find("budget_total")?, find(column)?, None)
        } else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: "line 1: not a metrics or aggregate file".into(),
            });
        };
        let mut points = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let num = |j: usize| -> Result<Option<f64>> {
                let s = f.get(j).copied().unwrap_or_default();
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse().map(Some).map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("line {}: bad number {s:?}", i + 2),
                })
            };
            if let (Some(x), Some(y)) = (num(xi)?, num(yi)?) {
                let band = match bi {
                    Some(b) => num(b)?.unwrap_or(0.0),
                    None => 0.0,
                };
                points.push((x, y, band));
            }
        }
        Ok(Curve {
            label: label.into(),
            points,
        })
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(t);
        t += step;
    }
    out
}

/// Renders curves with optional bands. Output depends only on the input.
pub fn render_svg(curves: &[Curve], title: &str, y_label: &str) -> String {
    let all = curves.iter().flat_map(|c| &c.points);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y, b) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y - b);
        y1 = y1.max(y + b);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        MARGIN_L + pw / 2.0,
        esc(title)
    );
    for t in nice_ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"##,
            MARGIN_T,
            MARGIN_T + ph,
            MARGIN_T + ph + 14.0
        );
    }
    for t in nice_ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"##,
            MARGIN_L,
            MARGIN_L + pw,
            MARGIN_L - 4.0,
            y + 4.0,
            t
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">cumulative annotation budget</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(14 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        MARGIN_T + ph / 2.0,
        esc(y_label)
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if c.points.iter().any(|p| p.2 > 0.0) {
            let upper = c
                .points
                .iter()
                .map(|&(x, y, b)| format!("{:.2},{:.2}", sx(x), sy(y + b)));
            let lower = c
                .points
                .iter()
                .rev()
                .map(|&(x, y, b)| format!("{:.2},{:.2}", sx(x), sy(y - b)));
            let pts: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(
                s,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                pts.join(" ")
            );
        }
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|&(x, y, _)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN_T + 12.0 + 16.0 * i as f64;
        let lx = MARGIN_L + pw + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 18.0,
            lx + 22.0,
            ly + 4.0,
            esc(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_cover_range() {
        let t = nice_ticks(0.0, 4000.0);
        assert_eq!(t.first(), Some(&0.0));
        assert_eq!(t.last(), Some(&4000.0));
        assert!(nice_ticks(0.31, 0.92).len() >= 3);
    }

    #[test]
    fn deterministic_and_well_formed() {
        let c = Curve {
            label: "a<b".into(),
            points: vec![(800.0, 0.3, 0.01), (1000.0, 0.5, 0.02)],
        };
        let a = render_svg(std::slice::from_ref(&c), "t", "mAP");
        assert_eq!(a, render_svg(&[c], "t", "mAP"));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("a&lt;b"));
        assert!(a.contains("<polygon"));
        let empty = render_svg(&[], "t", "mAP");
        assert!(empty.contains("</svg>"));
    }
}
