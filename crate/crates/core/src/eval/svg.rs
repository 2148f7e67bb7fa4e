//! Minimal static SVG charts.

use std::fmt::Write;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn bounds(values: impl Iterator<Item = f64>, include_zero: bool) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if include_zero {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    (lo, hi)
}

fn frame(out: &mut String, title: &str, y_label: &str, lo: f64, hi: f64) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>\n\
         <text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n\
         <line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>\n",
        WIDTH / 2.0,
        escape(title),
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label),
        HEIGHT - MARGIN,
        WIDTH - MARGIN,
        HEIGHT - MARGIN,
        HEIGHT - MARGIN,
    );
    for (v, y) in [(hi, MARGIN), (lo, HEIGHT - MARGIN)] {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            MARGIN - 4.0,
            y + 4.0,
            short(v)
        );
    }
}

fn short(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn y_of(v: f64, lo: f64, hi: f64) -> f64 {
    HEIGHT - MARGIN - (v - lo) / (hi - lo) * (HEIGHT - 2.0 * MARGIN)
}

/// Overlaid polylines sharing one x axis (sample index).
pub fn line_chart(title: &str, y_label: &str, lines: &[(&str, &[f64])]) -> String {
    let (lo, hi) = bounds(lines.iter().flat_map(|(_, v)| v.iter().copied()), false);
    let n = lines.iter().map(|(_, v)| v.len()).max().unwrap_or(0).max(2);
    let mut out = String::new();
    frame(&mut out, title, y_label, lo, hi);
    for (k, (name, values)) in lines.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = String::with_capacity(values.len() * 14);
        for (i, &v) in values.iter().enumerate().filter(|(_, v)| v.is_finite()) {
            let x = MARGIN + i as f64 / (n - 1) as f64 * (WIDTH - 2.0 * MARGIN);
            let _ = write!(pts, "{x:.1},{:.1} ", y_of(v, lo, hi));
        }
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1\" points=\"{}\"/>",
            pts.trim_end()
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            WIDTH - MARGIN - 140.0,
            MARGIN + 16.0 * k as f64,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bars, one per labelled value. Labels are drawn when they fit.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let (lo, hi) = bounds(bars.iter().map(|(_, v)| *v), true);
    let mut out = String::new();
    frame(&mut out, title, y_label, lo, hi);
    let slot = (WIDTH - 2.0 * MARGIN) / bars.len().max(1) as f64;
    let zero = y_of(0.0, lo, hi);
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = MARGIN + i as f64 * slot;
        if v.is_finite() {
            let y = y_of(*v, lo, hi);
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"><title>{}: {}</title></rect>",
                x + slot * 0.1,
                y.min(zero),
                slot * 0.8,
                (zero - y).abs(),
                PALETTE[0],
                escape(label),
                short(*v)
            );
        }
        if bars.len() <= 40 {
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
                x + slot / 2.0,
                HEIGHT - MARGIN + 16.0,
                escape(label)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
