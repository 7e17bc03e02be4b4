//! Minimal SVG rendering: boxplots, caterpillar plots and scatter plots.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// Linear map from data to pixels.
#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(values: impl IntoIterator<Item = f64>, px_lo: f64, px_hi: f64) -> Self {
        let (mut lo, mut hi) = values
            .into_iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Self { lo: lo - pad, hi: hi + pad, px_lo, px_hi }
    }

    fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }

    fn ticks(&self, n: usize) -> Vec<f64> {
        (0..=n).map(|k| self.lo + (self.hi - self.lo) * k as f64 / n as f64).collect()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
}

fn y_axis(out: &mut String, axis: &Axis, label: &str) {
    let x = LEFT;
    let _ = writeln!(out, r##"<line x1="{x}" y1="{TOP}" x2="{x}" y2="{}" stroke="#333"/>"##, HEIGHT - BOTTOM);
    for t in axis.ticks(5) {
        let y = axis.map(t);
        let _ = writeln!(out, r##"<line x1="{}" y1="{y:.2}" x2="{x}" y2="{y:.2}" stroke="#333"/>"##, x - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{t:.3}</text>"#, x - 6.0, y + 4.0);
    }
    let cy = (TOP + HEIGHT - BOTTOM) / 2.0;
    let _ = writeln!(out, r#"<text x="16" y="{cy}" text-anchor="middle" transform="rotate(-90 16 {cy})">{}</text>"#, escape(label));
}

fn x_axis(out: &mut String, axis: &Axis, label: &str) {
    let y = HEIGHT - BOTTOM;
    let _ = writeln!(out, r##"<line x1="{LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="#333"/>"##, WIDTH - RIGHT);
    for t in axis.ticks(5) {
        let x = axis.map(t);
        let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{y}" x2="{x:.2}" y2="{}" stroke="#333"/>"##, y + 4.0);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{t:.3}</text>"#, y + 18.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (LEFT + WIDTH - RIGHT) / 2.0, HEIGHT - 14.0, escape(label));
}

/// Quartiles by linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One box per group: quartile box, median line, whiskers at 1.5 IQR, outlier points.
pub fn boxplot(title: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let axis = Axis::new(groups.iter().flat_map(|(_, v)| v.iter().copied()), HEIGHT - BOTTOM, TOP);
    y_axis(&mut out, &axis, y_label);
    let slot = (WIDTH - LEFT - RIGHT) / groups.len().max(1) as f64;
    for (k, (name, values)) in groups.iter().enumerate() {
        let cx = LEFT + slot * (k as f64 + 0.5);
        let _ = writeln!(out, r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#, HEIGHT - BOTTOM + 18.0, escape(name));
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            continue;
        }
        v.sort_by(f64::total_cmp);
        let (q1, q2, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let iqr = q3 - q1;
        let lo = v.iter().copied().find(|&x| x >= q1 - 1.5 * iqr).unwrap_or(q1);
        let hi = v.iter().rev().copied().find(|&x| x <= q3 + 1.5 * iqr).unwrap_or(q3);
        let half = (slot * 0.3).min(40.0);
        let _ = writeln!(
            out,
            r##"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="#333"/>"##,
            axis.map(lo),
            axis.map(hi)
        );
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="#333"/>"##,
            cx - half,
            axis.map(q3),
            2.0 * half,
            (axis.map(q1) - axis.map(q3)).max(0.5)
        );
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#08306b" stroke-width="2"/>"##,
            cx - half,
            cx + half,
            y = axis.map(q2)
        );
        for &x in v.iter().filter(|&&x| x < lo || x > hi) {
            let _ = writeln!(out, r##"<circle cx="{cx:.2}" cy="{:.2}" r="2.5" fill="none" stroke="#333"/>"##, axis.map(x));
        }
    }
    out.push_str("</svg>\n");
    out
}

/// One interval per item.
#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub label: String,
    pub mid: f64,
    pub lo: f64,
    pub hi: f64,
    /// Drawn as a red cross when present.
    pub reference: Option<f64>,
    pub highlight: bool,
}

/// Items ordered left to right by their midpoint.
pub fn caterpillar(title: &str, y_label: &str, items: &[Interval]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let mut order: Vec<&Interval> = items.iter().collect();
    order.sort_by(|a, b| a.mid.total_cmp(&b.mid));
    let axis = Axis::new(items.iter().flat_map(|i| [i.lo, i.hi].into_iter().chain(i.reference)), HEIGHT - BOTTOM, TOP);
    y_axis(&mut out, &axis, y_label);
    let slot = (WIDTH - LEFT - RIGHT) / order.len().max(1) as f64;
    for (k, it) in order.iter().enumerate() {
        let x = LEFT + slot * (k as f64 + 0.5);
        let colour = if it.highlight { "#08519c" } else { "#969696" };
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{colour}"><title>{}</title></line>"#,
            axis.map(it.lo),
            axis.map(it.hi),
            escape(&it.label)
        );
        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{:.2}" r="2.5" fill="{colour}"/>"#, axis.map(it.mid));
        if let Some(r) = it.reference {
            let y = axis.map(r);
            let _ = writeln!(
                out,
                r##"<path d="M{:.2} {:.2} L{:.2} {:.2} M{:.2} {:.2} L{:.2} {:.2}" stroke="#cb181d"/>"##,
                x - 3.0,
                y - 3.0,
                x + 3.0,
                y + 3.0,
                x - 3.0,
                y + 3.0,
                x + 3.0,
                y - 3.0
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter point with an optional vertical interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub y_interval: Option<(f64, f64)>,
}

/// Scatter plot, optionally with the identity line.
pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[Point], identity: bool) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let xs = points.iter().map(|p| p.x);
    let ys = points.iter().flat_map(|p| [p.y].into_iter().chain(p.y_interval.into_iter().flat_map(|(a, b)| [a, b])));
    let (x_axis_, y_axis_) = if identity {
        let all: Vec<f64> = xs.chain(ys).collect();
        (Axis::new(all.iter().copied(), LEFT, WIDTH - RIGHT), Axis::new(all, HEIGHT - BOTTOM, TOP))
    } else {
        (Axis::new(xs, LEFT, WIDTH - RIGHT), Axis::new(ys, HEIGHT - BOTTOM, TOP))
    };
    x_axis(&mut out, &x_axis_, x_label);
    y_axis(&mut out, &y_axis_, y_label);
    if identity {
        let lo = x_axis_.lo.max(y_axis_.lo);
        let hi = x_axis_.hi.min(y_axis_.hi);
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#bbb" stroke-dasharray="4 3"/>"##,
            x_axis_.map(lo),
            y_axis_.map(lo),
            x_axis_.map(hi),
            y_axis_.map(hi)
        );
    }
    for p in points.iter().filter(|p| p.x.is_finite() && p.y.is_finite()) {
        let x = x_axis_.map(p.x);
        if let Some((lo, hi)) = p.y_interval {
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#9ecae1"/>"##,
                y_axis_.map(lo),
                y_axis_.map(hi)
            );
        }
        let _ = writeln!(out, r##"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="#08519c"/>"##, y_axis_.map(p.y));
    }
    out.push_str("</svg>\n");
    out
}
