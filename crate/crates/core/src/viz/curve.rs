use std::fs;
use std::path::{Path, PathBuf};

use super::svg::Svg;
use crate::diagnostics::PositionCurve;
use crate::error::{Error, Result};

/// Two-column table `position,value`, positions 1-based. Values use the
/// shortest round-tripping representation.
pub fn curve_table_text(values: &[f64]) -> String {
    let mut out = String::from("position,value\n");
    for (p, v) in values.iter().enumerate() {
        out.push_str(&format!("{},{v:?}\n", p + 1));
    }
    out
}

pub fn parse_curve_table(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("position,value") => {}
        other => return Err(Error::Data(format!("unexpected curve header {other:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let (p, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Data(format!("curve row {line:?} has no comma")))?;
            if p.parse::<usize>().ok() != Some(i + 1) {
                return Err(Error::Data(format!("curve row {} has position {p:?}", i + 1)));
            }
            v.parse::<f64>()
                .map_err(|e| Error::Data(format!("bad curve value {v:?}: {e}")))
        })
        .collect()
}

const W: f64 = 520.0;
const H: f64 = 320.0;
const LEFT: f64 = 60.0;
const TOP: f64 = 40.0;
const PLOT_W: f64 = 420.0;
const PLOT_H: f64 = 220.0;

/// Polyline of value against position. The y range is padded so a flat
/// curve sits in the middle of the plot.
pub fn curve_svg(values: &[f64]) -> String {
    let mut svg = Svg::new(W, H);
    svg.text(W / 2.0, 22.0, "middle", 14.0, "Mean original step index by simulated position");
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi - lo < 1e-12 { (lo - 1.0, hi + 1.0) } else { (lo, hi) };
    let n = values.len();
    let x_of = |p: usize| {
        if n == 1 {
            LEFT + PLOT_W / 2.0
        } else {
            LEFT + PLOT_W * p as f64 / (n - 1) as f64
        }
    };
    let y_of = |v: f64| TOP + PLOT_H * (hi - v) / (hi - lo);
    svg.line(LEFT, TOP + PLOT_H, LEFT + PLOT_W, TOP + PLOT_H, "#000000");
    svg.line(LEFT, TOP, LEFT, TOP + PLOT_H, "#000000");
    svg.text(LEFT - 6.0, TOP + 4.0, "end", 10.0, &format!("{hi:.2}"));
    svg.text(LEFT - 6.0, TOP + PLOT_H + 4.0, "end", 10.0, &format!("{lo:.2}"));
    for p in 0..n {
        svg.text(x_of(p), TOP + PLOT_H + 16.0, "middle", 10.0, &(p + 1).to_string());
    }
    svg.text(LEFT + PLOT_W / 2.0, H - 14.0, "middle", 11.0, "position in simulated trajectory");
    let points: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(p, &v)| format!("{:.2},{:.2}", x_of(p), y_of(v)))
        .collect();
    svg.raw(&format!(
        r##"<polyline points="{}" fill="none" stroke="#08306b" stroke-width="2"/>"##,
        points.join(" ")
    ));
    svg.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveFiles {
    pub csv: PathBuf,
    pub svg: PathBuf,
}

/// Writes `<base>.csv` and `<base>.svg`.
pub fn curve_emit(curve: &PositionCurve, base: &Path) -> Result<CurveFiles> {
    if curve.values.is_empty() {
        return Err(Error::Data("cannot emit an empty curve".into()));
    }
    let csv = base.with_extension("csv");
    let svg = base.with_extension("svg");
    fs::write(&csv, curve_table_text(&curve.values)).map_err(|e| Error::io(&csv, e))?;
    fs::write(&svg, curve_svg(&curve.values)).map_err(|e| Error::io(&svg, e))?;
    Ok(CurveFiles { csv, svg })
}

/// Vertex coordinates of the polyline in an SVG produced by [`curve_svg`].
pub fn polyline_points(svg: &str) -> Vec<(f64, f64)> {
    let Some(start) = svg.find("<polyline points=\"") else {
        return Vec::new();
    };
    let rest = &svg[start + "<polyline points=\"".len()..];
    let end = rest.find('"').unwrap_or(rest.len());
    rest[..end]
        .split_whitespace()
        .filter_map(|pair| {
            let (x, y) = pair.split_once(',')?;
            Some((x.parse().ok()?, y.parse().ok()?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows() {
        let text = curve_table_text(&[1.0, 2.0, 3.0]);
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows, ["1,1.0", "2,2.0", "3,3.0"]);
        assert_eq!(parse_curve_table(&text).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn flat_is_horizontal() {
        let pts = polyline_points(&curve_svg(&[2.0; 6]));
        assert_eq!(pts.len(), 6);
        assert!(pts.iter().all(|p| p.1 == pts[0].1));
    }

    #[test]
    fn parse_back_exact() {
        let v = vec![0.1, 1.0 / 3.0, std::f64::consts::E, 1e-300];
        assert_eq!(parse_curve_table(&curve_table_text(&v)).unwrap(), v);
    }
}
