//! Static log-log SVG report: one panel per metric, fold-averaged points as
//! × markers, fitted power laws as dashed lines.

use std::collections::BTreeMap;
use std::path::Path;

use crate::scaling::MetricKind;

use super::csvio::CurveRow;
use super::fits::FitRecord;
use super::HarnessError;

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_B: f64 = 42.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_R: f64 = 12.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Panel {
    metric: MetricKind,
    // (method, lambda_bits) -> fold-averaged (n, value) in n order
    groups: BTreeMap<(String, u64), Vec<(f64, f64)>>,
}

fn fold_mean_points(rows: &[&CurveRow]) -> Vec<(f64, f64)> {
    let mut by_n: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = by_n.entry(r.n.to_bits()).or_insert((0.0, 0));
        e.0 += r.value.max(1e-15).ln();
        e.1 += 1;
    }
    let mut pts: Vec<(f64, f64)> = by_n
        .into_iter()
        .map(|(nb, (sum, cnt))| (f64::from_bits(nb), (sum / cnt as f64).exp()))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

/// Writes the figure; panel layout and fit lines mirror the run's fits.
pub fn write_report_svg(path: &Path, rows: &[CurveRow], fits: &[FitRecord]) -> Result<(), HarnessError> {
    let mut metrics: Vec<MetricKind> = Vec::new();
    for r in rows {
        if !metrics.contains(&r.metric) {
            metrics.push(r.metric);
        }
    }
    let panels: Vec<Panel> = metrics
        .iter()
        .map(|&metric| {
            let mut groups: BTreeMap<(String, u64), Vec<(f64, f64)>> = BTreeMap::new();
            let mut keys: Vec<(String, u64)> = Vec::new();
            for r in rows.iter().filter(|r| r.metric == metric) {
                let key = (r.method.clone(), r.lambda.to_bits());
                if !keys.contains(&key) {
                    keys.push(key);
                }
            }
            for key in keys {
                let group_rows: Vec<&CurveRow> = rows
                    .iter()
                    .filter(|r| r.metric == metric && r.method == key.0 && r.lambda.to_bits() == key.1)
                    .collect();
                groups.insert(key, fold_mean_points(&group_rows));
            }
            Panel { metric, groups }
        })
        .collect();

    let cols = panels.len().clamp(1, 3);
    let rows_of_panels = panels.len().div_ceil(cols);
    let width = cols as f64 * PANEL_W;
    let height = rows_of_panels as f64 * PANEL_H;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"Helvetica, Arial, sans-serif\">\n"
    ));
    svg.push_str(&format!("<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"));

    for (idx, panel) in panels.iter().enumerate() {
        let ox = (idx % cols) as f64 * PANEL_W;
        let oy = (idx / cols) as f64 * PANEL_H;
        draw_panel(&mut svg, panel, fits, ox, oy);
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

fn nice_log_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let mut ticks = Vec::new();
    let start = lo.log10().floor() as i32;
    let end = hi.log10().ceil() as i32;
    for e in start..=end {
        let v = 10f64.powi(e);
        if v >= lo * 0.999 && v <= hi * 1.001 {
            ticks.push(v);
        }
    }
    ticks
}

fn draw_panel(svg: &mut String, panel: &Panel, fits: &[FitRecord], ox: f64, oy: f64) {
    let (mut n_lo, mut n_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut v_lo, mut v_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for pts in panel.groups.values() {
        for &(n, v) in pts {
            n_lo = n_lo.min(n);
            n_hi = n_hi.max(n);
            v_lo = v_lo.min(v);
            v_hi = v_hi.max(v);
        }
    }
    if !n_lo.is_finite() || n_lo <= 0.0 {
        return;
    }
    v_lo = v_lo.max(1e-15);
    v_hi = v_hi.max(v_lo * 10.0);
    let (lx0, lx1) = (n_lo.ln(), n_hi.ln().max(n_lo.ln() + 1e-9));
    let (ly0, ly1) = ((v_lo / 1.5).ln(), (v_hi * 1.5).ln());

    let plot_w = PANEL_W - MARGIN_L - MARGIN_R;
    let plot_h = PANEL_H - MARGIN_T - MARGIN_B;
    let x_of = |n: f64| ox + MARGIN_L + (n.ln() - lx0) / (lx1 - lx0) * plot_w;
    let y_of = |v: f64| oy + MARGIN_T + (1.0 - (v.max(1e-15).ln() - ly0) / (ly1 - ly0)) * plot_h;

    // Frame and title.
    svg.push_str(&format!(
        "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" fill=\"none\" stroke=\"#444\"/>\n",
        ox + MARGIN_L,
        oy + MARGIN_T
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"13\" fill=\"#111\">{}</text>\n",
        ox + MARGIN_L,
        oy + MARGIN_T - 9.0,
        panel.metric.as_str()
    ));

    for t in nice_log_ticks(n_lo, n_hi) {
        let x = x_of(t);
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n",
            oy + MARGIN_T,
            oy + MARGIN_T + plot_h
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"10\" fill=\"#333\" text-anchor=\"middle\">1e{}</text>\n",
            oy + MARGIN_T + plot_h + 14.0,
            t.log10().round() as i32
        ));
    }
    for t in nice_log_ticks(v_lo / 1.5, v_hi * 1.5) {
        let y = y_of(t);
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#eee\"/>\n",
            ox + MARGIN_L,
            ox + MARGIN_L + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" fill=\"#333\" text-anchor=\"end\">1e{}</text>\n",
            ox + MARGIN_L - 4.0,
            y + 3.0,
            t.log10().round() as i32
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"#333\" text-anchor=\"middle\">N</text>\n",
        ox + MARGIN_L + plot_w / 2.0,
        oy + PANEL_H - 10.0
    ));

    for (gi, ((method, lambda_bits), pts)) in panel.groups.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        let lambda = f64::from_bits(*lambda_bits);
        // Scatter markers (×).
        for &(n, v) in pts {
            let (x, y) = (x_of(n), y_of(v));
            svg.push_str(&format!(
                "<path d=\"M {x0:.1} {y0:.1} L {x1:.1} {y1:.1} M {x0:.1} {y1:.1} L {x1:.1} {y0:.1}\" stroke=\"{color}\" stroke-width=\"1.4\"/>\n",
                x0 = x - 3.0,
                y0 = y - 3.0,
                x1 = x + 3.0,
                y1 = y + 3.0
            ));
        }
        // Dashed fitted line sampled over the panel range.
        if let Some(fit) = fits.iter().find(|f| {
            f.metric == panel.metric && f.method == *method && f.lambda.to_bits() == *lambda_bits
        }) {
            let mut d = String::new();
            let steps = 48;
            for k in 0..=steps {
                let ln_n = lx0 + (lx1 - lx0) * k as f64 / steps as f64;
                let n = ln_n.exp();
                let v = fit.a * n.powf(fit.gamma) + fit.c;
                let (x, y) = (x_of(n), y_of(v));
                d.push_str(if k == 0 { "M" } else { "L" });
                d.push_str(&format!(" {x:.1} {y:.1} "));
            }
            svg.push_str(&format!(
                "<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-dasharray=\"5,4\" stroke-width=\"1.2\"/>\n"
            ));
            let label = if lambda != 0.0 {
                format!("{method} λ={lambda} γ={:.2}", fit.gamma)
            } else {
                format!("{method} γ={:.2}", fit.gamma)
            };
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"9\" fill=\"{color}\">{label}</text>\n",
                ox + MARGIN_L + 6.0,
                oy + MARGIN_T + 12.0 + gi as f64 * 11.0
            ));
        }
    }
}
