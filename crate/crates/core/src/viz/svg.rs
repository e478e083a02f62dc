//! Minimal SVG helpers. Output is plain text with fixed numeric formatting
//! so identical inputs give byte-identical files.

use std::fmt::Write as _;

/// Colour at value 1 of the single-hue ramp (value 0 is white).
pub const RAMP_MAX: (u8, u8, u8) = (8, 48, 107);

/// Ramp colour for `v` clamped to `[0, 1]`, as `#rrggbb`.
pub fn ramp(v: f64) -> String {
    let t = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let mix = |hi: u8| (255.0 + (f64::from(hi) - 255.0) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(RAMP_MAX.0), mix(RAMP_MAX.1), mix(RAMP_MAX.2))
}

/// Categorical palette for cluster ids.
pub fn category(i: usize) -> &'static str {
    const PALETTE: [&str; 10] = [
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
        "#bcbd22", "#17becf",
    ];
    PALETTE[i % PALETTE.len()]
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            body: String::new(),
            width,
            height,
        }
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, extra: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"{extra}/>"#
        );
    }

    pub fn text(&mut self, x: f64, y: f64, anchor: &str, size: f64, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" font-family="sans-serif" font-size="{size:.1}">{}</text>"#,
            escape(content)
        );
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="1"/>"#
        );
    }

    pub fn raw(&mut self, element: &str) {
        self.body.push_str(element);
        if !element.ends_with('\n') {
            self.body.push('\n');
        }
    }

    pub fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n<rect x=\"0\" y=\"0\" width=\"{w:.0}\" height=\"{h:.0}\" fill=\"#ffffff\"/>\n{body}</svg>\n",
            w = self.width,
            h = self.height,
            body = self.body
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), "#ffffff");
        assert_eq!(ramp(1.0), "#08306b");
        assert_eq!(ramp(2.0), "#08306b");
    }
}
