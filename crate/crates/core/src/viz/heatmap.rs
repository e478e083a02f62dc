use std::fs;
use std::path::{Path, PathBuf};

use super::svg::{ramp, Svg};
use crate::error::{Error, Result};
use crate::markov::TransitionModel;

/// `P` as comma-separated rows with six decimals and `\n` line ends.
pub fn heatmap_grid_text(matrix: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in matrix {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

const CELL: f64 = 56.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 60.0;

/// Transition heatmap: `k x k` cells (rows = from, columns = to) coloured on a
/// linear white-to-blue ramp over `[0, 1]`, with a colour scale on the right.
pub fn heatmap_svg(matrix: &[Vec<f64>]) -> String {
    let k = matrix.len();
    let grid = CELL * k as f64;
    let mut svg = Svg::new(LEFT + grid + 110.0, TOP + grid + 50.0);
    svg.text(LEFT + grid / 2.0, 22.0, "middle", 14.0, "Transition probability P(to | from)");
    svg.text(LEFT + grid / 2.0, TOP - 22.0, "middle", 11.0, "to");
    svg.text(18.0, TOP + grid / 2.0, "middle", 11.0, "from");
    for (i, row) in matrix.iter().enumerate() {
        let y = TOP + CELL * i as f64;
        svg.text(LEFT - 8.0, y + CELL / 2.0 + 4.0, "end", 11.0, &format!("C{i}"));
        for (j, &v) in row.iter().enumerate() {
            let x = LEFT + CELL * j as f64;
            svg.rect(
                x,
                y,
                CELL,
                CELL,
                &ramp(v),
                &format!(r##" stroke="#cccccc" data-row="{i}" data-col="{j}" data-value="{v:.6}""##),
            );
            let colour = if v > 0.5 { "#ffffff" } else { "#000000" };
            svg.raw(&format!(
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="10.0" fill="{colour}">{v:.2}</text>"#,
                x + CELL / 2.0,
                y + CELL / 2.0 + 3.5
            ));
        }
    }
    for j in 0..k {
        svg.text(LEFT + CELL * j as f64 + CELL / 2.0, TOP - 6.0, "middle", 11.0, &format!("C{j}"));
    }
    // colour scale, 0 at the bottom
    let bar_x = LEFT + grid + 30.0;
    let steps = 20;
    let step_h = grid / steps as f64;
    for s in 0..steps {
        let v = (s as f64 + 0.5) / steps as f64;
        let y = TOP + grid - step_h * (s as f64 + 1.0);
        svg.rect(bar_x, y, 18.0, step_h, &ramp(v), "");
    }
    svg.rect(bar_x, TOP, 18.0, grid, "none", r##" stroke="#000000""##);
    svg.text(bar_x + 24.0, TOP + grid + 4.0, "start", 10.0, "0.0");
    svg.text(bar_x + 24.0, TOP + grid / 2.0 + 4.0, "start", 10.0, "0.5");
    svg.text(bar_x + 24.0, TOP + 4.0, "start", 10.0, "1.0");
    svg.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapFiles {
    pub csv: PathBuf,
    pub svg: PathBuf,
}

/// Writes `<base>.csv` and `<base>.svg`.
pub fn heatmap_emit(model: &TransitionModel, base: &Path) -> Result<HeatmapFiles> {
    model.check_stochastic()?;
    let csv = base.with_extension("csv");
    let svg = base.with_extension("svg");
    fs::write(&csv, heatmap_grid_text(&model.matrix)).map_err(|e| Error::io(&csv, e))?;
    fs::write(&svg, heatmap_svg(&model.matrix)).map_err(|e| Error::io(&svg, e))?;
    Ok(HeatmapFiles { csv, svg })
}

/// Parses a grid written by [`heatmap_grid_text`].
pub fn parse_grid(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .map(|line| {
            line.split(',')
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|e| Error::Data(format!("bad grid cell {c:?}: {e}")))
                })
                .collect()
        })
        .collect()
}

/// `(row, col, fill)` of every heatmap cell in an SVG produced here.
pub fn cell_fills(svg: &str) -> Vec<(usize, usize, String)> {
    let attr = |line: &str, name: &str| -> Option<String> {
        let key = format!("{name}=\"");
        let start = line.find(&key)? + key.len();
        let end = line[start..].find('"')? + start;
        Some(line[start..end].to_string())
    };
    let mut out = Vec::new();
    for line in svg.lines().filter(|l| l.contains("data-row")) {
        if let (Some(r), Some(c), Some(f)) = (attr(line, "data-row"), attr(line, "data-col"), attr(line, "fill")) {
            if let (Ok(r), Ok(c)) = (r.parse(), c.parse()) {
                out.push((r, c, f));
            }
        }
    }
    out
}
