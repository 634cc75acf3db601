//! Static SVG charts: metric curves over training steps and the normalized
//! utility family.
//!
//! Output is plain markup with fixed float formatting and no timestamps, so
//! identical inputs produce identical bytes.

use crate::error::{Error, Result};
use crate::objectives::{normalize_utility, UtilityKind, UtilitySpec};
use crate::training::{MetricsRow, METRICS_HEADER};

const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 150.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 22.0;
const MARGIN_B: f64 = 20.0;
const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 0.01 && v.abs() < 10_000.0 {
        format!("{v:.4}")
    } else {
        format!("{v:.2e}")
    }
}

struct Series<'a> {
    name: &'a str,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

fn panel_svg(out: &mut String, series: &Series, y_offset: f64, color: &str) {
    let x0 = MARGIN_L;
    let y0 = y_offset + MARGIN_T;
    let w = PANEL_W - MARGIN_L - MARGIN_R;
    let h = PANEL_H - MARGIN_T - MARGIN_B;

    out.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\" stroke-width=\"1\"/>\n",
        fmt(x0),
        fmt(y0),
        fmt(w),
        fmt(h)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" fill=\"#333\">{}</text>\n",
        fmt(x0),
        fmt(y0 - 7.0),
        series.name
    ));

    if series.xs.is_empty() {
        return;
    }

    let (x_min, x_max) = bounds(&series.xs);
    let (y_min, y_max) = bounds(&series.ys);
    let (y_min, y_max) = if y_min == y_max {
        (y_min - 1.0, y_max + 1.0)
    } else {
        let pad = 0.05 * (y_max - y_min);
        (y_min - pad, y_max + pad)
    };
    let x_span = if x_max == x_min { 1.0 } else { x_max - x_min };

    let mut points = String::new();
    for (x, y) in series.xs.iter().zip(&series.ys) {
        let px = x0 + (x - x_min) / x_span * w;
        let py = y0 + h - (y - y_min) / (y_max - y_min) * h;
        points.push_str(&format!("{},{} ", fmt(px), fmt(py)));
    }
    out.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
        points.trim_end()
    ));

    // Axis labels: y range on the left, x range underneath.
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\" fill=\"#555\" text-anchor=\"end\">{}</text>\n",
        fmt(x0 - 4.0),
        fmt(y0 + 10.0),
        fmt_label(y_max)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\" fill=\"#555\" text-anchor=\"end\">{}</text>\n",
        fmt(x0 - 4.0),
        fmt(y0 + h),
        fmt_label(y_min)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\" fill=\"#555\">{}</text>\n",
        fmt(x0),
        fmt(y0 + h + 14.0),
        fmt_label(x_min)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\" fill=\"#555\" text-anchor=\"end\">{}</text>\n",
        fmt(x0 + w),
        fmt(y0 + h + 14.0),
        fmt_label(x_max)
    ));
}

fn bounds(vs: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in vs {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Render training metrics as stacked line panels, one per column.
///
/// The CSV must carry the exact metrics header; a header-only file yields
/// empty axes.
pub fn render_metrics_svg(csv: &str) -> Result<String> {
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or("").trim();
    if header != METRICS_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {METRICS_HEADER:?}, got {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(MetricsRow::parse_csv_line(line, i + 2)?);
    }

    let steps: Vec<f64> = rows.iter().map(|r| r.step as f64).collect();
    let columns: [(&str, Vec<f64>); 5] = [
        ("loss", rows.iter().map(|r| r.loss).collect()),
        (
            "implicit_acc",
            rows.iter().map(|r| r.implicit_acc).collect(),
        ),
        ("mean_delta", rows.iter().map(|r| r.mean_delta).collect()),
        ("mean_weight", rows.iter().map(|r| r.mean_weight).collect()),
        ("pref_mass", rows.iter().map(|r| r.pref_mass).collect()),
    ];

    let total_h = PANEL_H * columns.len() as f64;
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        PANEL_W, total_h, PANEL_W, total_h
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, (name, ys)) in columns.iter().enumerate() {
        let series = Series {
            name,
            xs: steps.clone(),
            ys: ys.clone(),
        };
        panel_svg(
            &mut out,
            &series,
            i as f64 * PANEL_H,
            PALETTE[i % PALETTE.len()],
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Render the five normalized utility curves over the margin window.
pub fn render_utilities_svg() -> Result<String> {
    let kinds = [
        (UtilityKind::Sigmoid, "sigmoid"),
        (UtilityKind::Kt, "kt"),
        (UtilityKind::LossAverse, "loss_averse"),
        (UtilityKind::RiskSeeking, "risk_seeking"),
        (UtilityKind::Linear, "linear"),
    ];
    let w = PANEL_W;
    let h = 360.0;
    let x0 = MARGIN_L;
    let y0 = MARGIN_T;
    let plot_w = w - MARGIN_L - MARGIN_R;
    let plot_h = h - MARGIN_T - MARGIN_B - 20.0;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\" stroke-width=\"1\"/>\n",
        fmt(x0),
        fmt(y0),
        fmt(plot_w),
        fmt(plot_h)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" fill=\"#333\">normalized utilities on [-5, 5]</text>\n",
        fmt(x0),
        fmt(y0 - 7.0)
    ));

    let n = 200;
    for (i, (kind, label)) in kinds.iter().enumerate() {
        let spec = UtilitySpec::new(*kind);
        let mut points = String::new();
        for k in 0..=n {
            let x = -5.0 + 10.0 * k as f64 / n as f64;
            let u = normalize_utility(&spec, x)?;
            let px = x0 + (x + 5.0) / 10.0 * plot_w;
            let py = y0 + plot_h - u * plot_h;
            points.push_str(&format!("{},{} ", fmt(px), fmt(py)));
        }
        let color = PALETTE[i % PALETTE.len()];
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            points.trim_end()
        ));
        // Legend swatch + label.
        let lx = x0 + 8.0 + 118.0 * i as f64;
        let ly = y0 + plot_h + 16.0;
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
            fmt(lx),
            fmt(ly - 9.0)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" fill=\"#333\">{label}</text>\n",
            fmt(lx + 14.0),
            fmt(ly)
        ));
    }
    out.push_str("</svg>\n");
    Ok(out)
}
