//! Static SVG line charts for the benchmark error curves. Hand-rolled
//! rendering keeps the output byte-deterministic for a given data series.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{HybridError, Result};
use crate::harness::metrics::MetricsCurves;

const HILQE_COLOR: &str = "#1f77b4";
const SKF_COLOR: &str = "#d62728";

struct Series<'a> {
    ys: &'a [f64],
    color: &'a str,
    dashed: bool,
}

struct Frame {
    x0: f64,
    y0: f64,
    width: f64,
    height: f64,
    t_min: f64,
    t_max: f64,
    y_max: f64,
}

impl Frame {
    fn map_x(&self, t: f64) -> f64 {
        self.x0 + (t - self.t_min) / (self.t_max - self.t_min).max(f64::MIN_POSITIVE) * self.width
    }

    fn map_y(&self, v: f64) -> f64 {
        self.y0 + self.height - v / self.y_max * self.height
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 100.0 || v.abs() < 0.01 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn panel(
    out: &mut String,
    frame: &Frame,
    times: &[f64],
    series: &[Series<'_>],
    title: &str,
    xlabel: &str,
    ylabel: &str,
) {
    let _ = write!(
        out,
        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black" stroke-width="1"/>"#,
        frame.x0, frame.y0, frame.width, frame.height
    );
    let _ = writeln!(out);

    // Axis ticks: 5 on each axis.
    for k in 0..=4 {
        let t = frame.t_min + (frame.t_max - frame.t_min) * k as f64 / 4.0;
        let x = frame.map_x(t);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black" stroke-width="1"/>"#,
            frame.y0 + frame.height,
            frame.y0 + frame.height + 4.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            frame.y0 + frame.height + 16.0,
            fmt_tick(t)
        );

        let v = frame.y_max * k as f64 / 4.0;
        let y = frame.map_y(v);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black" stroke-width="1"/>"#,
            frame.x0 - 4.0,
            frame.x0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
            frame.x0 - 6.0,
            y + 3.0,
            fmt_tick(v)
        );
    }

    for s in series {
        let mut points = String::new();
        for (t, v) in times.iter().zip(s.ys) {
            let _ = write!(points, "{:.2},{:.2} ", frame.map_x(*t), frame.map_y(*v));
        }
        let dash = if s.dashed {
            r#" stroke-dasharray="6,4""#
        } else {
            ""
        };
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
            points.trim_end(),
            s.color
        );
    }

    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle" font-weight="bold">{title}</text>"#,
        frame.x0 + frame.width / 2.0,
        frame.y0 - 8.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{xlabel}</text>"#,
        frame.x0 + frame.width / 2.0,
        frame.y0 + frame.height + 32.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{ylabel}</text>"#,
        frame.x0 - 40.0,
        frame.y0 + frame.height / 2.0,
        frame.x0 - 40.0,
        frame.y0 + frame.height / 2.0
    );
}

fn legend(out: &mut String, x: f64, y: f64) {
    let _ = writeln!(
        out,
        r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{HILQE_COLOR}" stroke-width="1.5"/>"#,
        x + 24.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="11">HiLQE</text>"#,
        x + 30.0,
        y + 4.0
    );
    let _ = writeln!(
        out,
        r#"<line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{SKF_COLOR}" stroke-width="1.5" stroke-dasharray="6,4"/>"#,
        y + 16.0,
        x + 24.0,
        y + 16.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="11">SKF</text>"#,
        x + 30.0,
        y + 20.0
    );
}

fn y_ceiling(series: &[&[f64]]) -> f64 {
    let max = series
        .iter()
        .flat_map(|s| s.iter())
        .fold(0.0_f64, |acc, &v| acc.max(v));
    if max <= 0.0 {
        1.0
    } else {
        max * 1.05
    }
}

fn svg_document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// Total error magnitude vs time: HiLQE solid, SKF dashed.
pub fn magnitude_chart(curves: &MetricsCurves) -> String {
    let mut body = String::new();
    let frame = Frame {
        x0: 70.0,
        y0: 40.0,
        width: 560.0,
        height: 320.0,
        t_min: *curves.times.first().unwrap_or(&0.0),
        t_max: *curves.times.last().unwrap_or(&1.0),
        y_max: y_ceiling(&[&curves.mean_err_hilqe, &curves.mean_err_skf]),
    };
    panel(
        &mut body,
        &frame,
        &curves.times,
        &[
            Series {
                ys: &curves.mean_err_hilqe,
                color: HILQE_COLOR,
                dashed: false,
            },
            Series {
                ys: &curves.mean_err_skf,
                color: SKF_COLOR,
                dashed: true,
            },
        ],
        "Average error magnitude",
        "time (s)",
        "error magnitude",
    );
    legend(&mut body, frame.x0 + frame.width - 90.0, frame.y0 + 14.0);
    svg_document(700.0, 420.0, &body)
}

/// Per-dimension grid of mean absolute error curves (one panel per state
/// entry).
pub fn per_dimension_chart(curves: &MetricsCurves) -> String {
    let n = curves.per_dim_hilqe.len();
    let cols = 4.min(n.max(1));
    let rows = n.div_ceil(cols);
    let (pw, ph) = (260.0, 180.0);
    let (mx, my) = (70.0, 50.0);
    let width = cols as f64 * (pw + mx) + 40.0;
    let height = rows as f64 * (ph + my + 30.0) + 40.0;

    let mut body = String::new();
    for d in 0..n {
        let row = d / cols;
        let col = d % cols;
        let frame = Frame {
            x0: 40.0 + col as f64 * (pw + mx) + 30.0,
            y0: 40.0 + row as f64 * (ph + my + 30.0),
            width: pw,
            height: ph,
            t_min: *curves.times.first().unwrap_or(&0.0),
            t_max: *curves.times.last().unwrap_or(&1.0),
            y_max: y_ceiling(&[&curves.per_dim_hilqe[d], &curves.per_dim_skf[d]]),
        };
        panel(
            &mut body,
            &frame,
            &curves.times,
            &[
                Series {
                    ys: &curves.per_dim_hilqe[d],
                    color: HILQE_COLOR,
                    dashed: false,
                },
                Series {
                    ys: &curves.per_dim_skf[d],
                    color: SKF_COLOR,
                    dashed: true,
                },
            ],
            &format!("state {d}"),
            "time (s)",
            "error",
        );
    }
    legend(&mut body, width - 120.0, 16.0);
    svg_document(width, height, &body)
}

/// Write both charts into `out_dir` and return their paths.
pub fn render_plots(curves: &MetricsCurves, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)
        .map_err(|e| HybridError::ParameterError(format!("{}: {e}", out_dir.display())))?;
    let magnitude = out_dir.join("error_magnitude.svg");
    fs::write(&magnitude, magnitude_chart(curves))
        .map_err(|e| HybridError::ParameterError(format!("{}: {e}", magnitude.display())))?;
    let per_dim = out_dir.join("error_per_dimension.svg");
    fs::write(&per_dim, per_dimension_chart(curves))
        .map_err(|e| HybridError::ParameterError(format!("{}: {e}", per_dim.display())))?;
    Ok(vec![magnitude, per_dim])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_curves(n_dims: usize, value: f64) -> MetricsCurves {
        let times: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        MetricsCurves {
            times: times.clone(),
            mean_err_hilqe: vec![value; 10],
            mean_err_skf: vec![value * 2.0; 10],
            improvement_pct: vec![0.0; 10],
            per_dim_hilqe: vec![vec![value; 10]; n_dims],
            per_dim_skf: vec![vec![value * 2.0; 10]; n_dims],
        }
    }

    #[test]
    fn charts_contain_both_series_and_no_nan() {
        let svg = magnitude_chart(&flat_curves(4, 0.5));
        assert!(svg.contains("polyline"));
        assert!(svg.contains(HILQE_COLOR));
        assert!(svg.contains(SKF_COLOR));
        assert!(svg.contains("time (s)"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn per_dimension_grid_has_one_panel_per_state() {
        for n in [4usize, 8] {
            let svg = per_dimension_chart(&flat_curves(n, 0.1));
            let panels = svg.matches("font-weight=\"bold\"").count();
            assert_eq!(panels, n);
        }
    }

    #[test]
    fn all_zero_curves_render_flat_without_nan() {
        let svg = magnitude_chart(&flat_curves(2, 0.0));
        assert!(!svg.contains("NaN"));
        assert!(svg.contains("polyline"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = magnitude_chart(&flat_curves(4, 0.3));
        let b = magnitude_chart(&flat_curves(4, 0.3));
        assert_eq!(a, b);
    }
}
