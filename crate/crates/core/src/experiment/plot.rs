use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{FrocCurveF64, FrocPoint};

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Writes one curve as `fp_per_image,sensitivity,threshold`. Values use
/// shortest round-trip formatting.
pub fn write_curve_csv(path: &Path, curve: &FrocCurveF64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fp_per_image", "sensitivity", "threshold"])?;
    for p in &curve.points {
        w.write_record([
            p.fp_per_image.to_string(),
            p.sensitivity.to_string(),
            p.threshold.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curve_csv(path: &Path) -> Result<FrocCurveF64> {
    let mut r = csv::Reader::from_path(path)?;
    let mut points = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Input(format!("{}: bad number in column {i}", path.display())))
        };
        points.push(FrocPoint {
            fp_per_image: num(0)?,
            sensitivity: num(1)?,
            threshold: num(2)?,
        });
    }
    Ok(FrocCurveF64 { points })
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Polyline vertices clipped to `[0, max_fp]`, starting at the origin side.
pub(super) fn polyline(curve: &FrocCurveF64, max_fp: f64) -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    let Some(first) = curve.points.first() else {
        return pts;
    };
    let start = if first.fp_per_image == 0.0 {
        first.sensitivity
    } else {
        0.0
    };
    pts.push((0.0, start));
    for p in &curve.points {
        let (px, ps) = *pts.last().expect("non-empty");
        if p.fp_per_image > max_fp {
            let s = ps + (p.sensitivity - ps) * (max_fp - px) / (p.fp_per_image - px);
            pts.push((max_fp, s));
            return pts;
        }
        pts.push((p.fp_per_image, p.sensitivity));
    }
    let (_, last) = *pts.last().expect("non-empty");
    pts.push((max_fp, last));
    pts
}

/// Overlay plot `froc.svg` plus `froc_<name>.csv` per curve in `dir`.
/// A curve without points gets a legend entry and no line.
pub fn emit_plots(dir: &Path, curves: &[(String, FrocCurveF64)], max_fp: f64) -> Result<Vec<PathBuf>> {
    if !(max_fp > 0.0) {
        return Err(Error::Input("plot range must be positive".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, curve) in curves {
        let path = dir.join(format!("froc_{}.csv", file_stem(name)));
        write_curve_csv(&path, curve)?;
        written.push(path);
    }

    let (pw, ph) = (W - 2.0 * MARGIN, H - 2.0 * MARGIN);
    let sx = |x: f64| MARGIN + pw * x / max_fp;
    let sy = |y: f64| H - MARGIN - ph * y;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (x0, y0, x1, y1) = (sx(0.0), sy(0.0), sx(max_fp), sy(1.0));
    let _ = writeln!(svg, r#"<g id="axes" stroke="black" fill="none">"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    let _ = writeln!(svg, "</g>");
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (tx, ty) = (sx(f * max_fp), sy(f));
        let _ = writeln!(
            svg,
            r#"<text x="{tx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 16.0,
            f * max_fp
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{f}</text>"#,
            x0 - 6.0,
            ty + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">false positives per image</text>"#,
        MARGIN + pw / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">sensitivity</text>"#,
        MARGIN + ph / 2.0,
        MARGIN + ph / 2.0
    );
    for (i, (name, curve)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts = polyline(curve, max_fp);
        if !pts.is_empty() {
            let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline class="curve" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let ly = MARGIN + 14.0 * i as f64;
        let lx = W - MARGIN - 110.0;
        let _ = writeln!(
            svg,
            r#"<g class="legend"><line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text></g>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    let path = dir.join("froc.svg");
    fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
