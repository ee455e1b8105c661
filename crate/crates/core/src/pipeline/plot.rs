//! Minimal SVG line charts.

use std::fmt::Write;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Shaded rectangle `(x0, y0, x1, y1)` in data coordinates.
    pub region: Option<(f64, f64, f64, f64)>,
    pub series: Vec<Series>,
}

const W: f64 = 520.0;
const H: f64 = 380.0;
const ML: f64 = 64.0;
const MR: f64 = 16.0;
const MT: f64 = 32.0;
const MB: f64 = 48.0;

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn panel(out: &mut String, p: &Panel, dx: f64) {
    let (x0, x1) = p.x_range;
    let (y0, y1) = p.y_range;
    let sx = |x: f64| dx + ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let sy = |y: f64| MT + (y1 - y) / (y1 - y0) * (H - MT - MB);
    let _ = writeln!(out, r#"<g font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="18" font-size="13" text-anchor="middle">{}</text>"#, dx + W / 2.0, escape(&p.title));
    if let Some((a, b, c, d)) = p.region {
        let (a, c) = (a.max(x0), c.min(x1));
        let (b, d) = (b.max(y0), d.min(y1));
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#cfe8cf" stroke="#2e7d32" stroke-width="1.5"/>"##,
            sx(a),
            sy(d),
            sx(c) - sx(a),
            sy(b) - sy(d)
        );
    }
    let _ = writeln!(
        out,
        r#"<rect x="{:.2}" y="{MT}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        dx + ML,
        W - ML - MR,
        H - MT - MB
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, sx(xv), H - MB + 16.0, fmt_tick(xv));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, dx + ML - 6.0, sy(yv) + 4.0, fmt_tick(yv));
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, dx + ML + (W - ML - MR) / 2.0, H - 10.0, escape(&p.x_label));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
        H / 2.0,
        dx + 14.0,
        H / 2.0,
        escape(&p.y_label)
    );
    let clip = |v: f64, lo: f64, hi: f64| v.clamp(lo, hi);
    for (i, s) in p.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(clip(x, x0, x1)), sy(clip(y, y0, y1))))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
            dx + ML + 8.0,
            MT + 14.0 + 13.0 * i as f64,
            escape(&s.label)
        );
    }
    let _ = writeln!(out, "</g>");
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Panels side by side in one document.
pub fn render(panels: &[Panel]) -> String {
    let mut out = String::new();
    let total = W * panels.len().max(1) as f64;
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{H}" viewBox="0 0 {total} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, p) in panels.iter().enumerate() {
        panel(&mut out, p, k as f64 * W);
    }
    out.push_str("</svg>\n");
    out
}

/// A single panel with a message instead of data.
pub fn notice(text: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"80\"><text x=\"20\" y=\"45\" font-family=\"sans-serif\" font-size=\"14\">{}</text></svg>\n",
        escape(text)
    )
}
