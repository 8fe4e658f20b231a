//! Minimal SVG emission: panels with axes, polylines, circles and star markers.

use std::fmt::Write;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// Data ranges covering `values`, padded when degenerate.
pub fn range_of(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.into_iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    (lo, hi)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// A rectangular plotting area mapping data coordinates to pixels.
#[derive(Debug, Clone, Copy)]
pub struct Panel {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl Panel {
    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let (x0, x1) = self.x_range;
        let (y0, y1) = self.y_range;
        let px = self.left + (x - x0) / (x1 - x0) * self.width;
        let py = self.top + self.height - (y - y0) / (y1 - y0) * self.height;
        (px, py)
    }

    fn scale(&self) -> f64 {
        self.width / (self.x_range.1 - self.x_range.0)
    }
}

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height, body: String::new() }
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="{size}" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        );
    }

    /// Frame with min/max tick labels and an optional title.
    pub fn axes(&mut self, p: &Panel, title: &str, x_label: &str, y_label: &str) {
        let _ = writeln!(
            self.body,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333" stroke-width="1"/>"##,
            p.left, p.top, p.width, p.height
        );
        let bottom = p.top + p.height;
        self.text(p.left, bottom + 14.0, 10.0, "start", &fmt_tick(p.x_range.0));
        self.text(p.left + p.width, bottom + 14.0, 10.0, "end", &fmt_tick(p.x_range.1));
        self.text(p.left - 4.0, bottom, 10.0, "end", &fmt_tick(p.y_range.0));
        self.text(p.left - 4.0, p.top + 10.0, 10.0, "end", &fmt_tick(p.y_range.1));
        self.text(p.left + p.width / 2.0, bottom + 28.0, 11.0, "middle", x_label);
        self.text(p.left - 30.0, p.top + p.height / 2.0, 11.0, "middle", y_label);
        if !title.is_empty() {
            self.text(p.left + p.width / 2.0, p.top - 8.0, 13.0, "middle", title);
        }
    }

    pub fn polyline(&mut self, p: &Panel, pts: &[(f64, f64)], stroke: &str, width: f64) {
        if pts.is_empty() {
            return;
        }
        let mut coords = String::new();
        for &(x, y) in pts {
            let (px, py) = p.map(x, y);
            let _ = write!(coords, "{px:.2},{py:.2} ");
        }
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#,
            coords.trim_end()
        );
    }

    /// Circle of data-space radius `r`.
    pub fn circle(&mut self, p: &Panel, x: f64, y: f64, r: f64, stroke: &str) {
        let (cx, cy) = p.map(x, y);
        let _ = writeln!(
            self.body,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="none" stroke="{stroke}" stroke-dasharray="4 3"/>"#,
            r * p.scale()
        );
    }

    /// Six-armed star of pixel radius `r`.
    pub fn star(&mut self, p: &Panel, x: f64, y: f64, r: f64, stroke: &str) {
        let (cx, cy) = p.map(x, y);
        let mut d = String::new();
        for k in 0..3 {
            let a = std::f64::consts::PI * k as f64 / 3.0;
            let (dx, dy) = (r * a.cos(), r * a.sin());
            let _ = write!(d, "M{:.2},{:.2}L{:.2},{:.2}", cx - dx, cy - dy, cx + dx, cy + dy);
        }
        let _ = writeln!(self.body, r#"<path d="{d}" stroke="{stroke}" stroke-width="1"/>"#);
    }

    pub fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 1e-2 && v.abs() < 1e4) {
        format!("{:.2}", v)
    } else {
        format!("{:.2e}", v)
    }
}

/// Line plot of `values` against their index.
pub fn trace_plot(values: &[f64], title: &str, y_label: &str) -> String {
    let (width, height) = (900.0, 320.0);
    let y_range = range_of(values.iter().copied());
    let x_range = (0.0, (values.len().max(2) - 1) as f64);
    let panel = Panel { left: 70.0, top: 30.0, width: width - 100.0, height: height - 80.0, x_range, y_range };
    let mut svg = Svg::new(width, height);
    svg.axes(&panel, title, "iteration", y_label);
    let pts: Vec<(f64, f64)> = values.iter().enumerate().map(|(i, v)| (i as f64, *v)).collect();
    svg.polyline(&panel, &pts, color(0), 0.8);
    svg.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_ranges_are_padded() {
        assert_eq!(range_of([2.0, 2.0]), (1.0, 3.0));
        assert_eq!(range_of([]), (-1.0, 1.0));
        assert_eq!(range_of([-1.0, 3.0, f64::NAN]), (-1.0, 3.0));
    }

    #[test]
    fn panel_maps_corners() {
        let p = Panel { left: 10.0, top: 20.0, width: 100.0, height: 50.0, x_range: (0.0, 1.0), y_range: (0.0, 2.0) };
        assert_eq!(p.map(0.0, 0.0), (10.0, 70.0));
        assert_eq!(p.map(1.0, 2.0), (110.0, 20.0));
    }

    #[test]
    fn text_is_escaped() {
        let mut s = Svg::new(10.0, 10.0);
        s.text(0.0, 0.0, 10.0, "start", "a<b & c");
        assert!(s.finish().contains("a&lt;b &amp; c"));
    }
}
