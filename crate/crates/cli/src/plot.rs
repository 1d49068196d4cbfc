//! Two-curve SVG chart of probe scores over training steps.

use std::fmt::Write;

use prefopt_core::train::TrainingTrace;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

pub const POSITIVE_COLOR: &str = "#1f77b4";
pub const NEGATIVE_COLOR: &str = "#d62728";

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Renders the probe positive and negative means. Identical traces give
/// identical bytes.
pub fn render_svg(trace: &TrainingTrace) -> String {
    let rows = &trace.rows;
    let steps = rows.iter().map(|r| r.step as f64);
    let (x0, x1) = span(
        steps.clone().fold(f64::INFINITY, f64::min),
        steps.fold(f64::NEG_INFINITY, f64::max),
    );
    let ys = rows.iter().flat_map(|r| [r.probe_pos_alp, r.probe_neg_alp]);
    let (lo, hi) = span(
        ys.clone().fold(f64::INFINITY, f64::min),
        ys.fold(f64::NEG_INFINITY, f64::max),
    );
    let pad = 0.05 * (hi - lo);
    let (y0, y1) = (lo - pad, hi + pad);
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (WIDTH - LEFT - RIGHT);
    let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * (HEIGHT - TOP - BOTTOM);
    let points = |f: fn(&prefopt_core::train::TraceRow) -> f64| {
        rows.iter()
            .map(|r| format!("{:.2},{:.2}", px(r.step as f64), py(f(r))))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let (bx, by) = (LEFT, HEIGHT - BOTTOM);
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT},{TOP} V{by} H{:.2}" fill="none" stroke="black"/>"#,
        WIDTH - RIGHT
    );
    for (v, x) in [(x0, px(x0)), (x1, px(x1))] {
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{v}</text>"#,
            by + 18.0
        );
    }
    for (v, y) in [(y0, py(y0)), (y1, py(y1))] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            bx - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">step</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">mean avg log-prob (probe)</text>"#,
        (TOP + by) / 2.0,
        (TOP + by) / 2.0
    );
    let _ = writeln!(
        s,
        r#"<polyline class="positive" fill="none" stroke="{POSITIVE_COLOR}" stroke-width="2" points="{}"/>"#,
        points(|r| r.probe_pos_alp)
    );
    let _ = writeln!(
        s,
        r#"<polyline class="negative" fill="none" stroke="{NEGATIVE_COLOR}" stroke-width="2" points="{}"/>"#,
        points(|r| r.probe_neg_alp)
    );
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="24" fill="{POSITIVE_COLOR}">positive</text><text x="{:.2}" y="24" fill="{NEGATIVE_COLOR}">negative</text>"#,
        LEFT + 80.0
    );
    s.push_str("</svg>\n");
    s
}
