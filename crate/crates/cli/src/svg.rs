//! Minimal log-log scatter plots with an optional fitted line.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;

/// Line `log10 y = slope·log10 x + intercept`.
#[derive(Debug, Clone, Copy)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
}

impl Fit {
    /// Least-squares fit in log-log coordinates.
    pub fn of(pts: &[(f64, f64)]) -> Option<Self> {
        let slope = ymglue::report::loglog_slope(pts).ok()?;
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0.log10()).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1.log10()).sum::<f64>() / n;
        Some(Self { slope, intercept: my - slope * mx })
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn decade_range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (lo, hi) = (lo.log10().floor(), hi.log10().ceil());
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

/// Renders the points of `pts` (all positive) on log-log axes.
pub fn loglog(title: &str, xlabel: &str, ylabel: &str, pts: &[(f64, f64)], fit: Option<Fit>, note: &str) -> String {
    let pts: Vec<(f64, f64)> = pts.iter().copied().filter(|p| p.0 > 0.0 && p.1 > 0.0).collect();
    let (x0, x1) = if pts.is_empty() { (0.0, 1.0) } else { decade_range(pts.iter().map(|p| p.0)) };
    let (y0, y1) = if pts.is_empty() { (0.0, 1.0) } else { decade_range(pts.iter().map(|p| p.1)) };
    let px = |lx: f64| LEFT + (lx - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |ly: f64| H - BOTTOM - (ly - y0) / (y1 - y0) * (H - TOP - BOTTOM);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="28" font-size="16" text-anchor="middle" font-family="sans-serif">{}</text>"#, W / 2.0, esc(title));
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    for d in (x0 as i32)..=(x1 as i32) {
        let x = px(d as f64);
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{TOP}" x2="{x:.1}" y2="{}" stroke="lightgray"/>"#, H - BOTTOM);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" font-size="12" text-anchor="middle" font-family="sans-serif">1e{d}</text>"#, H - BOTTOM + 18.0);
    }
    for d in (y0 as i32)..=(y1 as i32) {
        let y = py(d as f64);
        let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="lightgray"/>"#, W - RIGHT);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" font-size="12" text-anchor="end" font-family="sans-serif">1e{d}</text>"#, LEFT - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="13" text-anchor="middle" font-family="sans-serif">{}</text>"#, W / 2.0, H - 15.0, esc(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="20" y="{}" font-size="13" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 20 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(ylabel)
    );
    if let Some(f) = fit {
        let (a, b) = (pts.iter().map(|p| p.0.log10()).fold(f64::INFINITY, f64::min), pts.iter().map(|p| p.0.log10()).fold(f64::NEG_INFINITY, f64::max));
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="steelblue" stroke-dasharray="6 4"/>"#,
            px(a),
            py(f.slope * a + f.intercept),
            px(b),
            py(f.slope * b + f.intercept)
        );
    }
    for &(x, y) in &pts {
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="firebrick"/>"#, px(x.log10()), py(y.log10()));
    }
    let mut label = String::new();
    if let Some(f) = fit {
        label = format!("fitted slope {:.3}", f.slope);
    }
    if !note.is_empty() {
        label = if label.is_empty() { note.to_string() } else { format!("{label}; {note}") };
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="13" font-family="sans-serif">{}</text>"#, LEFT + 10.0, TOP + 20.0, esc(&label));
    s.push_str("</svg>\n");
    s
}
