//! Artifact writers: CSV with fixed 17-digit scientific numbers, pretty JSON,
//! and a standalone SVG scatter.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::dynamics::TrajectoryRecord;
use crate::error::{Error, Result};

/// One CSV cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Field {
    Int(i64),
    Num(f64),
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Num(v)
    }
}

impl From<i64> for Field {
    fn from(v: i64) -> Self {
        Field::Int(v)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::Int(v as i64)
    }
}

impl From<bool> for Field {
    fn from(v: bool) -> Self {
        Field::Int(v as i64)
    }
}

/// Scientific notation with 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_field(f: &Field) -> String {
    match f {
        Field::Int(i) => i.to_string(),
        Field::Num(v) => fmt_num(*v),
    }
}

pub fn csv_string(header: &[&str], rows: &[Vec<Field>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(fmt_field).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<Field>]) -> Result<()> {
    fs::write(path, csv_string(header, rows))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, s + "\n")?;
    Ok(())
}

/// Columns t, energy, norm_rho, norm_u, norm_S and re_q, im_q when a
/// control was recorded.
pub fn trajectory_table(rec: &TrajectoryRecord) -> (Vec<&'static str>, Vec<Vec<Field>>) {
    let mut header = vec!["t", "energy", "norm_rho", "norm_u", "norm_S"];
    if rec.control.is_some() {
        header.extend(["re_q", "im_q"]);
    }
    let rows = (0..rec.times.len())
        .map(|i| {
            let mut r: Vec<Field> = vec![
                rec.times[i].into(),
                rec.energies[i].into(),
                rec.norm_rho[i].into(),
                rec.norm_u[i].into(),
                rec.norm_s[i].into(),
            ];
            if let Some(q) = &rec.control {
                r.push(q[i].re.into());
                r.push(q[i].im.into());
            }
            r
        })
        .collect();
    (header, rows)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 50.0;

/// Standalone SVG of the points with labeled Re/Im axes. The viewport is
/// fixed and every coordinate is printed with three decimals, so identical
/// input gives identical bytes.
pub fn svg_scatter(points: &[(f64, f64)], title: &str) -> Result<String> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Validation(vec!["scatter points must be finite".into()]));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = |a: f64, b: f64| {
        let w = (b - a).abs().max(1e-9);
        (a - 0.05 * w, b + 0.05 * w)
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.3}" y="24" font-size="14" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<rect x="{l:.3}" y="{t:.3}" width="{:.3}" height="{:.3}" fill="none" stroke="black"/>"#, r - l, b - t);
    if x0 < 0.0 && x1 > 0.0 {
        let _ = writeln!(s, r#"<line x1="{0:.3}" y1="{t:.3}" x2="{0:.3}" y2="{b:.3}" stroke="gray" stroke-dasharray="4 3"/>"#, sx(0.0));
    }
    if y0 < 0.0 && y1 > 0.0 {
        let _ = writeln!(s, r#"<line x1="{l:.3}" y1="{0:.3}" x2="{r:.3}" y2="{0:.3}" stroke="gray" stroke-dasharray="4 3"/>"#, sy(0.0));
    }
    for (v, anchor_y) in [(x0, b + 16.0), (x1, b + 16.0)] {
        let _ = writeln!(s, r#"<text x="{:.3}" y="{anchor_y:.3}" font-size="11" text-anchor="middle">{}</text>"#, sx(v), short(v));
    }
    for v in [y0, y1] {
        let _ = writeln!(s, r#"<text x="{:.3}" y="{:.3}" font-size="11" text-anchor="end">{}</text>"#, l - 4.0, sy(v) + 4.0, short(v));
    }
    let _ = writeln!(s, r#"<text x="{:.3}" y="{:.3}" font-size="13" text-anchor="middle">Re</text>"#, WIDTH / 2.0, HEIGHT - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0:.3}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {0:.3})">Im</text>"#,
        HEIGHT / 2.0
    );
    let _ = writeln!(s, r#"<g fill="steelblue">"#);
    for &(x, y) in points {
        let _ = writeln!(s, r#"<circle cx="{:.3}" cy="{:.3}" r="2.5"/>"#, sx(x), sy(y));
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

pub fn emit_svg_scatter(points: &[(f64, f64)], path: &Path) -> Result<()> {
    let s = svg_scatter(points, "eigenvalues")?;
    fs::write(path, s)?;
    Ok(())
}

fn short(v: f64) -> String {
    format!("{v:.3}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_uses_seventeen_digits() {
        let s = csv_string(&["n", "x"], &[vec![Field::Int(-3), Field::Num(0.1)]]);
        assert_eq!(s, "n,x\n-3,1.0000000000000001e-1\n");
        assert_eq!(fmt_num(1.0 / 3.0).parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn scatter_is_deterministic_and_counts_markers() {
        let pts: Vec<(f64, f64)> = (0..37).map(|k| (-(k as f64) * 0.1, (k as f64).sin())).collect();
        let a = svg_scatter(&pts, "t").unwrap();
        let b = svg_scatter(&pts, "t").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.matches("<circle").count(), 37);
        assert!(a.contains(">Re<") && a.contains(">Im<"));
    }

    #[test]
    fn empty_scatter_is_rejected() {
        assert!(matches!(svg_scatter(&[], "t"), Err(Error::EmptyInput)));
        assert!(svg_scatter(&[(f64::NAN, 0.0)], "t").is_err());
    }
}
