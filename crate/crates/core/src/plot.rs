//! Small self-contained SVG line plots for prediction-vs-truth overlays and
//! loss curves. No interactive display; files are deterministic text.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 42.0;
const MARGIN_BOTTOM: f64 = 54.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// One polyline.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Renders labeled series into an SVG file.
pub fn write_line_plot(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> Result<()> {
    std::fs::write(path, render_line_plot(title, x_label, y_label, series))?;
    Ok(())
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !x_min.is_finite() {
        (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
    }
    if x_max - x_min < 1e-12 {
        x_min -= 0.5;
        x_max += 0.5;
    }
    // Breathing room above and below the data.
    let pad = (y_max - y_min).max(1e-12) * 0.05;
    (x_min, x_max, y_min - pad, y_max + pad)
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn render_line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x_min, x_max, y_min, y_max) = bounds(series);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let to_px = |x: f64, y: f64| {
        let px = MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w;
        let py = MARGIN_TOP + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h;
        (px, py)
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    // Frame and ticks.
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="#444" stroke-width="1"/>"##
    );
    let ticks = 5;
    for i in 0..=ticks {
        let fx = i as f64 / ticks as f64;
        let xv = x_min + fx * (x_max - x_min);
        let (px, _) = to_px(xv, y_min);
        let y0 = MARGIN_TOP + plot_h;
        let _ = writeln!(
            svg,
            r##"<line x1="{px:.1}" y1="{y0:.1}" x2="{px:.1}" y2="{:.1}" stroke="#444" stroke-width="1"/>"##,
            y0 + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{px:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            y0 + 18.0,
            fmt_tick(xv)
        );

        let yv = y_min + fx * (y_max - y_min);
        let (_, py) = to_px(x_min, yv);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{py:.1}" x2="{MARGIN_LEFT}" y2="{py:.1}" stroke="#444" stroke-width="1"/>"##,
            MARGIN_LEFT - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 8.0,
            py + 4.0,
            fmt_tick(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    );

    // Series and legend.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !s.points.is_empty() {
            let mut pts = String::new();
            for &(x, y) in &s.points {
                let (px, py) = to_px(x, y);
                let _ = write!(pts, "{px:.2},{py:.2} ");
            }
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                pts.trim_end()
            );
        }
        let lx = MARGIN_LEFT + 12.0;
        let ly = MARGIN_TOP + 16.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            lx + 22.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 28.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_polylines_and_labels() {
        let series = vec![
            Series { label: "truth".into(), points: vec![(0.0, 22.0), (1.0, 23.0), (2.0, 23.5)] },
            Series { label: "prediction".into(), points: vec![(0.0, 22.1), (1.0, 22.9)] },
        ];
        let svg = render_line_plot("joint 1", "t [s]", "temperature [degC]", &series);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("truth"));
        assert!(svg.contains("prediction"));
        assert!(svg.contains("t [s]"));
        assert!(svg.contains("</svg>"));
    }

    #[test]
    fn output_is_deterministic() {
        let series = vec![Series { label: "a".into(), points: vec![(0.0, 1.0), (5.0, -3.0)] }];
        let a = render_line_plot("t", "x", "y", &series);
        let b = render_line_plot("t", "x", "y", &series);
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_ranges_do_not_break() {
        let series = vec![Series { label: "flat".into(), points: vec![(1.0, 2.0), (1.0, 2.0)] }];
        let svg = render_line_plot("flat", "x", "y", &series);
        assert!(svg.contains("<polyline"));
        assert!(!svg.contains("NaN"));

        let empty: Vec<Series> = vec![];
        let svg = render_line_plot("empty", "x", "y", &empty);
        assert!(!svg.contains("NaN"));
    }
}
