use std::fmt::Write;

const WIDTH: f64 = 800.0;
const PANEL_HEIGHT: f64 = 220.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 40.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dashed: bool,
}

/// One chart with its own axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if lo > hi {
        (0.0, 1.0)
    } else if lo == hi {
        let pad = if lo == 0.0 { 0.5 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

fn label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e5) {
        format!("{v:.3e}")
    } else {
        format!("{}", (v * 1e4).round() / 1e4)
    }
}

/// Renders stacked line-chart panels as a standalone SVG document.
pub fn render(title: &str, panels: &[Panel]) -> String {
    let height = TOP + panels.len() as f64 * PANEL_HEIGHT;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for (i, panel) in panels.iter().enumerate() {
        let y0 = TOP + i as f64 * PANEL_HEIGHT;
        let (plot_top, plot_bottom) = (y0 + 20.0, y0 + PANEL_HEIGHT - BOTTOM);
        let (plot_left, plot_right) = (LEFT, WIDTH - RIGHT);
        let (xmin, xmax) = bounds(panel.series.iter().flat_map(|s| s.x.iter().copied()));
        let (ymin, ymax) = bounds(panel.series.iter().flat_map(|s| s.y.iter().copied()));
        let sx = |x: f64| plot_left + (x - xmin) / (xmax - xmin) * (plot_right - plot_left);
        let sy = |y: f64| plot_bottom - (y - ymin) / (ymax - ymin) * (plot_bottom - plot_top);

        let _ = writeln!(
            out,
            r#"<text x="{plot_left}" y="{}" font-size="12">{}</text>"#,
            y0 + 14.0,
            escape(&panel.title)
        );
        let _ = writeln!(
            out,
            r#"<path d="M{plot_left} {plot_top} L{plot_left} {plot_bottom} L{plot_right} {plot_bottom}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            plot_left - 4.0,
            plot_top + 4.0,
            label(ymax)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{plot_bottom}" text-anchor="end">{}</text>"#,
            plot_left - 4.0,
            label(ymin)
        );
        let _ = writeln!(
            out,
            r#"<text x="{plot_left}" y="{}" text-anchor="start">{}</text>"#,
            plot_bottom + 14.0,
            label(xmin)
        );
        let _ = writeln!(
            out,
            r#"<text x="{plot_right}" y="{}" text-anchor="end">{}</text>"#,
            plot_bottom + 14.0,
            label(xmax)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (plot_left + plot_right) / 2.0,
            plot_bottom + 28.0,
            escape(&panel.x_label)
        );
        for (j, s) in panel.series.iter().enumerate() {
            let color = COLORS[j % COLORS.len()];
            let points: Vec<String> =
                s.x.iter()
                    .zip(&s.y)
                    .filter(|(x, y)| x.is_finite() && y.is_finite())
                    .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                    .collect();
            let dash = if s.dashed {
                r#" stroke-dasharray="5,3""#
            } else {
                ""
            };
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                points.join(" ")
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="end" fill="{color}">{}</text>"#,
                plot_right,
                y0 + 14.0 + j as f64 * 12.0,
                escape(&s.name)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
