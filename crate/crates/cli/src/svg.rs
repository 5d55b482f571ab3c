//! Hand-rolled SVG line/scatter plots for the report.
//!
//! Only what the report needs: fixed-size panels with linear axes, tick
//! labels, polylines, scatter points, and a one-line legend. All numbers are
//! written with fixed precision so repeated runs emit identical bytes.

use std::fmt::Write;

/// Default panel size (px).
pub const PANEL_W: f64 = 640.0;
/// Default panel height (px).
pub const PANEL_H: f64 = 220.0;

const MARGIN_L: f64 = 58.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 26.0;
const MARGIN_B: f64 = 42.0;

/// Color cycle for series.
pub const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// One plot panel; stack several into a document with [`document`].
pub struct Panel {
    width: f64,
    height: f64,
    title: String,
    x_label: String,
    y_label: String,
    /// Data ranges; y may be given high-to-low to flip the axis (image rows).
    x_range: (f64, f64),
    y_range: (f64, f64),
    shapes: String,
    legend: Vec<(String, String)>,
}

impl Panel {
    /// Panel with the default size.
    pub fn new(
        title: &str,
        x_label: &str,
        y_label: &str,
        x_range: (f64, f64),
        y_range: (f64, f64),
    ) -> Self {
        Self::with_size(PANEL_W, PANEL_H, title, x_label, y_label, x_range, y_range)
    }

    /// Panel with an explicit size.
    #[allow(clippy::too_many_arguments)]
    pub fn with_size(
        width: f64,
        height: f64,
        title: &str,
        x_label: &str,
        y_label: &str,
        x_range: (f64, f64),
        y_range: (f64, f64),
    ) -> Self {
        Self {
            width,
            height,
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            x_range: pad_degenerate(x_range),
            y_range: pad_degenerate(y_range),
            shapes: String::new(),
            legend: Vec::new(),
        }
    }

    fn sx(&self, x: f64) -> f64 {
        let (x0, x1) = self.x_range;
        MARGIN_L + (x - x0) / (x1 - x0) * (self.width - MARGIN_L - MARGIN_R)
    }

    fn sy(&self, y: f64) -> f64 {
        let (y0, y1) = self.y_range;
        self.height - MARGIN_B - (y - y0) / (y1 - y0) * (self.height - MARGIN_T - MARGIN_B)
    }

    /// Connected line through the points, in data coordinates.
    pub fn polyline(&mut self, points: &[(f64, f64)], color: &str) {
        if points.len() < 2 {
            return;
        }
        let mut path = String::with_capacity(points.len() * 12);
        for (x, y) in points {
            let _ = write!(path, "{:.2},{:.2} ", self.sx(*x), self.sy(*y));
        }
        let _ = writeln!(
            self.shapes,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#,
            path.trim_end()
        );
    }

    /// Dots at the points, in data coordinates.
    pub fn scatter(&mut self, points: &[(f64, f64)], radius: f64, color: &str) {
        for (x, y) in points {
            let _ = writeln!(
                self.shapes,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{radius:.1}" fill="{color}"/>"#,
                self.sx(*x),
                self.sy(*y)
            );
        }
    }

    /// Adds a legend entry; drawn top-right in insertion order.
    pub fn legend(&mut self, color: &str, label: &str) {
        self.legend.push((color.to_string(), label.to_string()));
    }

    fn render(&self, out: &mut String) {
        let (px0, px1) = (MARGIN_L, self.width - MARGIN_R);
        let (py0, py1) = (MARGIN_T, self.height - MARGIN_B);
        let _ = writeln!(
            out,
            r##"<rect x="{px0:.2}" y="{py0:.2}" width="{:.2}" height="{:.2}" fill="#fcfcfc" stroke="#333" stroke-width="1"/>"##,
            px1 - px0,
            py1 - py0
        );

        let (xt, xstep) = ticks(self.x_range);
        for t in &xt {
            let x = self.sx(*t);
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{py1:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333" stroke-width="1"/>"##,
                py1 + 4.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{x:.2}" y="{:.2}" font-size="11" text-anchor="middle" font-family="sans-serif">{}</text>"#,
                py1 + 17.0,
                fmt_tick(*t, xstep)
            );
        }
        let (yt, ystep) = ticks(self.y_range);
        for t in &yt {
            let y = self.sy(*t);
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{px0:.2}" y2="{y:.2}" stroke="#333" stroke-width="1"/>"##,
                px0 - 4.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end" font-family="sans-serif">{}</text>"#,
                px0 - 7.0,
                y + 3.5,
                fmt_tick(*t, ystep)
            );
        }

        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="16" font-size="13" text-anchor="middle" font-family="sans-serif">{}</text>"#,
            0.5 * (px0 + px1),
            self.title
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle" font-family="sans-serif">{}</text>"#,
            0.5 * (px0 + px1),
            self.height - 8.0,
            self.x_label
        );
        let _ = writeln!(
            out,
            r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 14 {:.2})">{}</text>"#,
            0.5 * (py0 + py1),
            0.5 * (py0 + py1),
            self.y_label
        );

        out.push_str(&self.shapes);

        for (i, (color, label)) in self.legend.iter().enumerate() {
            let y = py0 + 14.0 + 15.0 * i as f64;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{color}"/>"#,
                px1 - 120.0,
                y - 8.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{y:.2}" font-size="11" font-family="sans-serif">{label}</text>"#,
                px1 - 106.0
            );
        }
    }
}

/// Stacks panels vertically into one SVG document.
pub fn document(panels: &[Panel]) -> String {
    let width = panels.iter().map(|p| p.width).fold(0.0, f64::max);
    let height: f64 = panels.iter().map(|p| p.height).sum();
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let mut offset = 0.0;
    for panel in panels {
        let _ = writeln!(out, r#"<g transform="translate(0 {offset:.0})">"#);
        panel.render(&mut out);
        out.push_str("</g>\n");
        offset += panel.height;
    }
    out.push_str("</svg>\n");
    out
}

/// Expands a zero-width range so the linear map stays finite.
fn pad_degenerate((a, b): (f64, f64)) -> (f64, f64) {
    if (a - b).abs() > 0.0 {
        (a, b)
    } else {
        (a - 0.5, b + 0.5)
    }
}

/// Tick positions at a 1/2/5 step covering the range, at most 6 of them.
fn ticks((a, b): (f64, f64)) -> (Vec<f64>, f64) {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10.0_f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 5.5)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut t = first;
    while t <= hi + 1e-9 * span {
        // Snap near-zero ticks so the label is not "-0".
        out.push(if t.abs() < 1e-9 * span { 0.0 } else { t });
        t += step;
    }
    (out, step)
}

/// Tick label with a precision that suits the step size.
fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor() as i32).clamp(0, 6) as usize
    };
    format!("{v:.decimals$}")
}
