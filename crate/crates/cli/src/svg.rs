//! Minimal SVG emission for the two figure kinds the CLI produces. Every
//! figure is a single self-contained file: inline styling, no external
//! assets, and the plotted numbers embedded as CSV inside XML comments so a
//! figure can be audited or re-plotted without rerunning anything.

use std::fmt::Write as _;

pub const PALETTE: [&str; 6] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Accumulates SVG elements; `finish` wraps them in the document envelope.
pub struct Canvas {
    width: f64,
    height: f64,
    body: String,
}

impl Canvas {
    pub fn new(width: f64, height: f64) -> Canvas {
        Canvas { width, height, body: String::new() }
    }

    /// Embeds auditable data. XML comments must not contain `--`, so runs
    /// of hyphens are collapsed; CSV of numbers and plain labels never
    /// produces them anyway.
    pub fn comment(&mut self, text: &str) {
        let safe = text.replace("--", "-");
        writeln!(self.body, "<!--\n{safe}\n-->").unwrap();
    }

    pub fn raw(&mut self, element: &str) {
        writeln!(self.body, "{element}").unwrap();
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, style: &str) {
        writeln!(
            self.body,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" style="{style}"/>"#,
            fmt_px(x1),
            fmt_px(y1),
            fmt_px(x2),
            fmt_px(y2)
        )
        .unwrap();
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], style: &str) {
        let coords: Vec<String> =
            pts.iter().map(|&(x, y)| format!("{},{}", fmt_px(x), fmt_px(y))).collect();
        writeln!(
            self.body,
            r#"<polyline fill="none" points="{}" style="{style}"/>"#,
            coords.join(" ")
        )
        .unwrap();
    }

    pub fn polygon(&mut self, pts: &[(f64, f64)], style: &str) {
        let coords: Vec<String> =
            pts.iter().map(|&(x, y)| format!("{},{}", fmt_px(x), fmt_px(y))).collect();
        writeln!(self.body, r#"<polygon points="{}" style="{style}"/>"#, coords.join(" "))
            .unwrap();
    }

    pub fn text(&mut self, x: f64, y: f64, anchor: &str, size: f64, content: &str) {
        writeln!(
            self.body,
            r#"<text x="{}" y="{}" text-anchor="{anchor}" font-size="{size}">{}</text>"#,
            fmt_px(x),
            fmt_px(y),
            escape(content)
        )
        .unwrap();
    }

    pub fn finish(self) -> String {
        format!(
            concat!(
                r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}" "#,
                r#"width="{w}" height="{h}" font-family="Helvetica, Arial, sans-serif">"#,
                "\n",
                r#"<rect width="{w}" height="{h}" fill="white"/>"#,
                "\n{body}</svg>\n"
            ),
            w = fmt_px(self.width),
            h = fmt_px(self.height),
            body = self.body
        )
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Pixel coordinates with sub-pixel noise trimmed.
fn fmt_px(v: f64) -> String {
    fmt_num((v * 100.0).round() / 100.0)
}

/// Shortest clean decimal for ticks and coordinates.
pub fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded = (v * 1e9).round() / 1e9;
    let s = format!("{rounded}");
    if s == "-0" {
        "0".to_string()
    } else {
        s
    }
}

/// Maps a data rectangle onto a pixel rectangle (y grows downward).
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub px: f64,
    pub py: f64,
    pub pw: f64,
    pub ph: f64,
}

impl Frame {
    pub fn x(&self, v: f64) -> f64 {
        self.px + (v - self.x0) / (self.x1 - self.x0) * self.pw
    }

    pub fn y(&self, v: f64) -> f64 {
        self.py + self.ph - (v - self.y0) / (self.y1 - self.y0) * self.ph
    }

    /// Axis lines, ticks, grid, and labels. Tick positions are in data
    /// space; labels are caller-formatted so log axes can label decades.
    pub fn draw_axes(
        &self,
        c: &mut Canvas,
        xticks: &[(f64, String)],
        yticks: &[(f64, String)],
        xlabel: &str,
        ylabel: &str,
    ) {
        const AXIS: &str = "stroke:#333333;stroke-width:1";
        const GRID: &str = "stroke:#dddddd;stroke-width:0.6";
        for (v, label) in yticks {
            let y = self.y(*v);
            c.line(self.px, y, self.px + self.pw, y, GRID);
            c.line(self.px - 4.0, y, self.px, y, AXIS);
            c.text(self.px - 7.0, y + 3.5, "end", 10.0, label);
        }
        for (v, label) in xticks {
            let x = self.x(*v);
            c.line(x, self.py, x, self.py + self.ph, GRID);
            c.line(x, self.py + self.ph, x, self.py + self.ph + 4.0, AXIS);
            c.text(x, self.py + self.ph + 15.0, "middle", 10.0, label);
        }
        c.line(self.px, self.py, self.px, self.py + self.ph, AXIS);
        c.line(self.px, self.py + self.ph, self.px + self.pw, self.py + self.ph, AXIS);
        c.text(self.px + self.pw / 2.0, self.py + self.ph + 30.0, "middle", 11.0, xlabel);
        c.raw(&format!(
            r#"<text x="{x}" y="{y}" text-anchor="middle" font-size="11" transform="rotate(-90 {x} {y})">{t}</text>"#,
            x = fmt_px(self.px - 38.0),
            y = fmt_px(self.py + self.ph / 2.0),
            t = escape(ylabel)
        ));
    }
}

/// Round-number ticks covering [lo, hi] at a 1/2/5 step.
pub fn linear_ticks(lo: f64, hi: f64, target: usize) -> Vec<(f64, String)> {
    if !(hi > lo) {
        return vec![(lo, fmt_num(lo))];
    }
    let raw = (hi - lo) / target.max(2) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| (hi - lo) / s <= target as f64)
        .unwrap_or(10.0 * mag);
    let mut ticks = Vec::new();
    let mut k = (lo / step).ceil() as i64;
    while k as f64 * step <= hi + step * 1e-9 {
        let v = k as f64 * step;
        ticks.push((v, fmt_num(v)));
        k += 1;
    }
    ticks
}

/// Decade ticks for an axis that plots log10 values; falls back to round
/// ticks in log space when the range spans less than two decades.
pub fn log_ticks(lo: f64, hi: f64) -> Vec<(f64, String)> {
    let first = lo.ceil() as i64;
    let last = hi.floor() as i64;
    if last - first >= 1 {
        (first..=last).map(|e| (e as f64, format!("1e{e}"))).collect()
    } else {
        linear_ticks(lo, hi, 4)
            .into_iter()
            .map(|(v, _)| (v, format!("{:.3}", 10f64.powf(v))))
            .collect()
    }
}

/// Color-keyed legend in the frame's top-right corner.
pub fn draw_legend(c: &mut Canvas, frame: &Frame, entries: &[(String, &str)]) {
    let x = frame.px + frame.pw - 10.0;
    let mut y = frame.py + 14.0;
    for (label, color) in entries {
        c.line(x - 30.0, y - 3.5, x - 12.0, y - 3.5, &format!("stroke:{color};stroke-width:2"));
        c.text(x - 34.0, y, "end", 10.0, label);
        y += 14.0;
    }
}
