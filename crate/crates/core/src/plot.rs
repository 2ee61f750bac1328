//! Static three-panel SVG of a simulation log: velocities, gaps and
//! accelerations over time. Output depends only on the log, so reruns give
//! identical bytes.

use std::fmt::Write;

use crate::sim::SimLog;

const WIDTH: f64 = 800.0;
const PANEL_H: f64 = 240.0;
const TOP: f64 = 40.0;
const GAP_Y: f64 = 50.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"];
const HV_COLOR: &str = "#d62728";

struct Series {
    label: String,
    color: String,
    dashed: bool,
    points: Vec<(f64, f64)>,
}

fn series(label: impl Into<String>, color: &str, dashed: bool, points: Vec<(f64, f64)>) -> Series {
    Series { label: label.into(), color: color.into(), dashed, points }
}

/// Roughly five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn range(series: &[Series]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in series.iter().flat_map(|s| &s.points) {
        lo = lo.min(p.1);
        hi = hi.max(p.1);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn panel(svg: &mut String, index: usize, title: &str, y_label: &str, t_max: f64, data: &[Series]) {
    let y0 = TOP + index as f64 * (PANEL_H + GAP_Y);
    let plot_w = WIDTH - LEFT - RIGHT;
    let (lo, hi) = range(data);
    let sx = |t: f64| LEFT + plot_w * t / t_max;
    let sy = |v: f64| y0 + PANEL_H * (hi - v) / (hi - lo);

    let _ = writeln!(svg, r##"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">{title}</text>"##, LEFT + plot_w / 2.0, y0 - 8.0);
    let _ = writeln!(svg, r##"<rect x="{LEFT:.2}" y="{y0:.2}" width="{plot_w:.2}" height="{PANEL_H:.2}" fill="none" stroke="#000"/>"##);
    for v in ticks(lo, hi) {
        let y = sy(v);
        let _ = writeln!(svg, r##"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + plot_w);
        let _ = writeln!(svg, r##"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"##, LEFT - 5.0, y + 4.0, fmt_tick(v));
    }
    for t in ticks(0.0, t_max) {
        let x = sx(t);
        let _ = writeln!(svg, r##"<text x="{x:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"##, y0 + PANEL_H + 14.0, fmt_tick(t));
    }
    let _ = writeln!(
        svg,
        r##"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{y_label}</text>"##,
        LEFT - 50.0, y0 + PANEL_H / 2.0, LEFT - 50.0, y0 + PANEL_H / 2.0
    );

    if data.iter().all(|s| s.points.is_empty()) {
        let _ = writeln!(svg, r##"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle" fill="#888">no data</text>"##, LEFT + plot_w / 2.0, y0 + PANEL_H / 2.0);
    }
    for (i, s) in data.iter().enumerate() {
        if !s.points.is_empty() {
            let mut d = String::new();
            for (j, (t, v)) in s.points.iter().enumerate() {
                let _ = write!(d, "{}{:.2},{:.2}", if j == 0 { "M" } else { " L" }, sx(*t), sy(*v));
            }
            let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
            let _ = writeln!(svg, r##"<path d="{d}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"##, s.color);
        }
        let ly = y0 + 12.0 + 16.0 * i as f64;
        let lx = LEFT + plot_w + 10.0;
        let _ = writeln!(svg, r##"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"/>"##, lx + 20.0, s.color);
        let _ = writeln!(svg, r##"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"##, lx + 25.0, ly + 4.0, s.label);
    }
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Renders the log. `delta` is the untightened minimum gap drawn as a
/// reference line.
pub fn render_svg(log: &SimLog, delta: f64) -> String {
    let rows = &log.rows;
    let t_max = rows.len().max(1) as f64 * log.dt;
    let col = |i: usize| COLORS[i % COLORS.len()];

    let mut velocity = vec![series("v_ref", "#000", true, rows.iter().map(|r| (r.time, r.v_ref)).collect())];
    for n in 0..log.n_av {
        velocity.push(series(format!("AV{}", n + 1), col(n), false, rows.iter().map(|r| (r.time, r.av_velocity[n])).collect()));
    }
    velocity.push(series("HV", HV_COLOR, false, rows.iter().map(|r| (r.time, r.hv_velocity)).collect()));

    let mut gaps = Vec::new();
    for n in 0..log.n_av {
        let label = if n + 1 < log.n_av { format!("AV{}-AV{}", n + 1, n + 2) } else { format!("AV{}-HV", n + 1) };
        gaps.push(series(label, col(n), false, rows.iter().map(|r| (r.time, r.gaps[n])).collect()));
    }
    let ends = if rows.is_empty() { vec![] } else { vec![(0.0, delta), (t_max, delta)] };
    gaps.push(series("delta", "#000", true, ends));
    gaps.push(series("bound", HV_COLOR, true, rows.iter().map(|r| (r.time, r.hv_bound)).collect()));

    let accel = (0..log.n_av)
        .map(|n| series(format!("AV{}", n + 1), col(n), false, rows.iter().map(|r| (r.time, r.av_accel[n])).collect()))
        .collect::<Vec<_>>();

    let height = TOP + 3.0 * PANEL_H + 2.0 * GAP_Y + 40.0;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#);
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#fff"/>"##);
    panel(&mut svg, 0, &format!("{} / {}: velocity tracking", log.scenario, log.variant.name()), "velocity [m/s]", t_max, &velocity);
    panel(&mut svg, 1, "distance between vehicles", "distance [m]", t_max, &gaps);
    panel(&mut svg, 2, "acceleration inputs", "acceleration [m/s²]", t_max, &accel);
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">time [s]</text>"#, LEFT + (WIDTH - LEFT - RIGHT) / 2.0, height - 8.0);
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::{SolveStatus, Variant};
    use crate::sim::LogRow;

    fn log(n: usize) -> SimLog {
        let rows = (0..n)
            .map(|k| LogRow {
                time: 0.1 * k as f64,
                v_ref: 20.0,
                av_position: vec![0.0, -20.0],
                av_velocity: vec![k as f64, 0.5 * k as f64],
                av_accel: vec![1.0, 0.5],
                hv_position: -40.0,
                hv_velocity: 0.2 * k as f64,
                hv_mean: -40.0,
                hv_variance: 0.0,
                hv_bound: 20.1,
                gaps: vec![20.0 + k as f64, 20.0],
                status: SolveStatus::Optimal,
                qp_iterations: 10,
                slack: 0.0,
            })
            .collect();
        SimLog { scenario: "constant".into(), variant: Variant::Gp, n_av: 2, dt: 0.1, rows, failure: None }
    }

    #[test]
    fn three_panels_and_deterministic() {
        let a = render_svg(&log(30), 20.0);
        assert_eq!(a, render_svg(&log(30), 20.0));
        assert_eq!(a.matches("<rect x=").count(), 3);
        assert!(a.contains("AV2-HV"));
        assert!(a.ends_with("</svg>\n"));
        assert!(!a.contains("NaN"));
    }

    #[test]
    fn empty_and_single_row_logs() {
        let empty = render_svg(&log(0), 20.0);
        assert_eq!(empty.matches("no data").count(), 3);
        let one = render_svg(&log(1), 20.0);
        assert!(!one.contains("no data"));
        assert!(!one.contains("NaN") && !one.contains("inf"));
    }

    #[test]
    fn tick_values() {
        assert_eq!(ticks(0.0, 30.0), vec![0.0, 10.0, 20.0, 30.0]);
        assert_eq!(ticks(-5.2, 5.2), vec![-5.0, 0.0, 5.0]);
        assert_eq!(ticks(19.0, 21.0), vec![19.0, 19.5, 20.0, 20.5, 21.0]);
    }
}
