//! A small self-contained SVG line chart with a logarithmic y axis.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Plots each `(label, points)` series; nonpositive y values are skipped.
pub fn log_linear_svg(title: &str, series: &[(&str, &[(f64, f64)])]) -> String {
    let points = || {
        series
            .iter()
            .flat_map(|(_, pts)| pts.iter())
            .filter(|(x, y)| x.is_finite() && y.is_finite() && *y > 0.0)
    };
    let x_max = points().map(|p| p.0).fold(0.0f64, f64::max).max(1e-12);
    let x_min = points().map(|p| p.0).fold(x_max, f64::min).min(0.0);
    let y_lo = points().map(|p| p.1.log10()).fold(f64::INFINITY, f64::min);
    let y_hi = points()
        .map(|p| p.1.log10())
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut d_lo, mut d_hi) = if y_lo.is_finite() {
        (y_lo.floor(), y_hi.ceil())
    } else {
        (0.0, 1.0)
    };
    if d_hi <= d_lo {
        d_lo -= 1.0;
        d_hi += 1.0;
    }

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |ly: f64| TOP + (d_hi - ly) / (d_hi - d_lo) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    let decades = (d_hi - d_lo) as i32;
    let label_every = (decades / 10 + 1).max(1);
    for k in 0..=decades {
        let d = d_lo + k as f64;
        let y = sy(d);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##,
            WIDTH - RIGHT
        );
        if k % label_every == 0 {
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{}</text>"#,
                LEFT - 6.0,
                y + 4.0,
                d as i32
            );
        }
    }
    for k in 0..=5 {
        let x = x_min + (x_max - x_min) * k as f64 / 5.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(x),
            HEIGHT - BOTTOM + 18.0,
            trim(x)
        );
    }
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">t</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );

    for (k, (label, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite() && *y > 0.0)
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y.log10())))
            .collect();
        if !coords.is_empty() {
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let ly = TOP + 16.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT - 190.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 24.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 30.0,
            ly + 4.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn trim(x: f64) -> String {
    let s = format!("{x:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
