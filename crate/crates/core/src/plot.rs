//! Minimal SVG charts built from CSV text, so every figure is derived from the
//! same data that is written to disk.

use std::fmt::Write;

use crate::error::{Error, Result};

const W: f64 = 800.0;
const H: f64 = 600.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn parse(csv: &str) -> Result<Table> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Input("empty CSV".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let rows = lines.map(|l| l.split(',').map(|s| s.trim().to_string()).collect()).collect();
    Ok(Table { header, rows })
}

impl Table {
    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("CSV has no column `{name}`")))
    }

    /// Numeric values of a column; unparsable cells (e.g. `undefined`) are `None`.
    fn values(&self, c: usize) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| r.get(c).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite()))
            .collect()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let _ = write!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" width="{W}" height="{H}" font-family="sans-serif" font-size="14">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="30" text-anchor="middle" font-size="18">{}</text>
"#,
            W / 2.0,
            escape(title)
        );
        let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(out, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
        for i in 0..=5 {
            let f = i as f64 / 5.0;
            let xv = self.x0 + f * (self.x1 - self.x0);
            let yv = self.y0 + f * (self.y1 - self.y0);
            let (x, y) = (self.px(xv), self.py(yv));
            let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{b}" x2="{x:.2}" y2="{}" stroke="black"/>"#, b + 5.0);
            let _ = writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, b + 22.0, tick(xv));
            let _ = writeln!(out, r#"<line x1="{}" y1="{y:.2}" x2="{l}" y2="{y:.2}" stroke="black"/>"#, l - 5.0);
            let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, l - 8.0, y + 5.0, tick(yv));
        }
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, H - 15.0, escape(xlabel));
        let _ = writeln!(
            out,
            r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">{1}</text>"#,
            (t + b) / 2.0,
            escape(ylabel)
        );
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.2}");
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        s
    }
}

/// Line chart of one or more `y_cols` against `x_col`. Cells that are not
/// numbers break the line. With `unit_range` both axes span [0, 1].
pub fn line_chart(csv: &str, x_col: &str, y_cols: &[&str], title: &str, unit_range: bool) -> Result<String> {
    let t = parse(csv)?;
    let xs = t.values(t.col(x_col)?);
    let ys: Vec<Vec<Option<f64>>> = y_cols.iter().map(|c| t.col(c).map(|i| t.values(i))).collect::<Result<_>>()?;
    let frame = if unit_range {
        Frame {
            x0: 0.0,
            x1: 1.0,
            y0: 0.0,
            y1: 1.0,
        }
    } else {
        let finite = |v: &[Option<f64>]| v.iter().flatten().copied().collect::<Vec<f64>>();
        let xv = finite(&xs);
        let yv: Vec<f64> = ys.iter().flat_map(|c| finite(c)).collect();
        let range = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            match (lo.is_finite(), hi > lo) {
                (true, true) => (lo, hi),
                (true, false) => (lo - 0.5, lo + 0.5),
                _ => (0.0, 1.0),
            }
        };
        let (x0, x1) = range(&xv);
        let (y0, y1) = range(&yv);
        Frame { x0, x1, y0, y1 }
    };
    let mut out = String::new();
    frame.axes(&mut out, title, x_col, &y_cols.join(", "));
    for (k, col) in ys.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut segment: Vec<String> = Vec::new();
        let flush = |seg: &mut Vec<String>, out: &mut String| {
            if !seg.is_empty() {
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                    seg.join(" ")
                );
                seg.clear();
            }
        };
        for (x, y) in xs.iter().zip(col) {
            match (x, y) {
                (Some(x), Some(y)) => segment.push(format!("{:.2},{:.2}", frame.px(*x), frame.py(*y))),
                _ => flush(&mut segment, &mut out),
            }
        }
        flush(&mut segment, &mut out);
        let ly = TOP + 20.0 + 20.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            W - RIGHT - 150.0,
            W - RIGHT - 125.0,
            W - RIGHT - 118.0,
            ly + 5.0,
            escape(y_cols[k])
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Bar chart from a `bin_lo,bin_hi,count` table.
pub fn histogram_chart(csv: &str, title: &str) -> Result<String> {
    let t = parse(csv)?;
    let lo = t.values(t.col("bin_lo")?);
    let hi = t.values(t.col("bin_hi")?);
    let count = t.values(t.col("count")?);
    let max = count.iter().flatten().copied().fold(0.0, f64::max).max(1.0);
    let frame = Frame {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: max,
    };
    let mut out = String::new();
    frame.axes(&mut out, title, "score", "count");
    for ((l, h), c) in lo.iter().zip(&hi).zip(&count) {
        if let (Some(l), Some(h), Some(c)) = (l, h, c) {
            let (x0, x1) = (frame.px(*l), frame.px(*h));
            let (y0, y1) = (frame.py(*c), frame.py(0.0));
            let _ = writeln!(
                out,
                r##"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4" stroke="white"/>"##,
                x1 - x0,
                y1 - y0
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}
