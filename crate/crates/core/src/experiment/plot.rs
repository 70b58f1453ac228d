//! Minimal hand-written SVG plots for diagnostics.

use std::fmt::Write;

use crate::stats::FiveNumber;

const W: f64 = 480.0;
const H: f64 = 360.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 28.0;
const BOTTOM: f64 = 44.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
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
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(hi > lo) {
        return (lo - 1.0, lo + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn open(out: &mut String, title: &str, xlabel: &str, ylabel: &str, f: &Frame) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        esc(title)
    );
    let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        out,
        r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        r - l,
        b - t
    );
    for i in 0..=4 {
        let fx = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
        let fy = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let (x, y) = (f.px(fx), f.py(fy));
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{b}" x2="{x:.1}" y2="{}" stroke="black"/>"#,
            b + 4.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{}" text-anchor="middle">{}</text>"#,
            b + 16.0,
            tick(fx)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{y:.1}" x2="{l}" y2="{y:.1}" stroke="black"/>"#,
            l - 4.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            l - 6.0,
            y + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        H - 8.0,
        esc(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">{1}</text>"#,
        (t + b) / 2.0,
        esc(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 10.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

/// Empirical coverage against nominal quantile, one line per series, with
/// the identity as reference.
pub fn ec_curve_svg(series: &[(String, Vec<(f64, f64)>)]) -> String {
    let f = Frame {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: 1.0,
    };
    let mut out = String::new();
    open(
        &mut out,
        "Empirical coverage vs nominal quantile",
        "nominal quantile",
        "empirical coverage",
        &f,
    );
    let _ = writeln!(
        out,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 3"/>"##,
        f.px(0.0),
        f.py(0.0),
        f.px(1.0),
        f.py(1.0)
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="series" data-name="{}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            esc(name),
            path.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#,
                f.px(x),
                f.py(y)
            );
        }
        let ly = TOP + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#,
            LEFT + 8.0,
            ly - 9.0
        );
        let _ = writeln!(out, r#"<text x="{}" y="{ly}">{}</text>"#, LEFT + 22.0, esc(name));
    }
    out.push_str("</svg>\n");
    out
}

/// Blue to red ramp for `t` in `[0, 1]`.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (40.0 + 215.0 * t) as u8;
    let g = (90.0 + 60.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8;
    let b = (220.0 - 200.0 * t) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Label against prediction, coloured by `color` (e.g. interval width).
pub fn scatter_svg(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64, f64)]) -> String {
    let lo = points
        .iter()
        .flat_map(|p| [p.0, p.1])
        .fold(f64::INFINITY, f64::min)
        .min(0.0);
    let hi = points.iter().flat_map(|p| [p.0, p.1]).fold(f64::NEG_INFINITY, f64::max);
    let (a, b) = padded(lo, if hi.is_finite() { hi } else { 1.0 });
    let f = Frame {
        x0: a,
        x1: b,
        y0: a,
        y1: b,
    };
    let cmin = points.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let cmax = points.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let span = if cmax > cmin { cmax - cmin } else { 1.0 };
    let mut out = String::new();
    open(&mut out, title, xlabel, ylabel, &f);
    let _ = writeln!(
        out,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 3"/>"##,
        f.px(a),
        f.py(a),
        f.px(b),
        f.py(b)
    );
    for &(x, y, c) in points {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.1}" cy="{:.1}" r="1.8" fill="{}" fill-opacity="0.7"/>"#,
            f.px(x),
            f.py(y),
            ramp((c - cmin) / span)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One box per group: whiskers at min/max, box from q1 to q3, median line.
pub fn boxplot_svg(title: &str, ylabel: &str, groups: &[(String, FiveNumber)]) -> String {
    let lo = groups.iter().map(|g| g.1.min).fold(f64::INFINITY, f64::min).min(0.0);
    let hi = groups.iter().map(|g| g.1.max).fold(f64::NEG_INFINITY, f64::max);
    let (y0, y1) = padded(lo, if hi.is_finite() { hi } else { 1.0 });
    let f = Frame {
        x0: 0.0,
        x1: groups.len().max(1) as f64,
        y0,
        y1,
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        esc(title)
    );
    let (l, b) = (LEFT, H - BOTTOM);
    let _ = writeln!(out, r#"<line x1="{l}" y1="{TOP}" x2="{l}" y2="{b}" stroke="black"/>"#);
    let _ = writeln!(
        out,
        r#"<line x1="{l}" y1="{b}" x2="{}" y2="{b}" stroke="black"/>"#,
        W - RIGHT
    );
    for i in 0..=4 {
        let v = y0 + (y1 - y0) * i as f64 / 4.0;
        let y = f.py(v);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            l - 6.0,
            y + 4.0,
            tick(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">{1}</text>"#,
        (TOP + b) / 2.0,
        esc(ylabel)
    );
    let slot = (W - LEFT - RIGHT) / groups.len().max(1) as f64;
    for (i, (name, s)) in groups.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let half = slot * 0.3;
        let _ = writeln!(
            out,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
            f.py(s.min),
            f.py(s.max)
        );
        let _ = writeln!(
            out,
            r##"<rect class="box" data-name="{}" x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#9ecae1" stroke="black"/>"##,
            esc(name),
            cx - half,
            f.py(s.q3),
            2.0 * half,
            (f.py(s.q1) - f.py(s.q3)).max(0.5)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{2:.1}" x2="{:.1}" y2="{2:.1}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            cx + half,
            f.py(s.median)
        );
        let _ = writeln!(
            out,
            r#"<text x="{cx:.1}" y="{}" text-anchor="middle">{} (n={})</text>"#,
            b + 16.0,
            esc(name),
            s.count
        );
    }
    out.push_str("</svg>\n");
    out
}
