//! Minimal SVG plots of sample clouds.

use std::fmt::Write as _;

use ndarray::ArrayView2;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 40.0;

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo >= hi || lo.is_nan() || hi.is_nan() {
        let mid = if lo.is_finite() { lo } else { 0.0 };
        return (mid - 1.0, mid + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn axis_labels(s: &mut String, lo: f64, hi: f64) {
    let y = HEIGHT - MARGIN + 16.0;
    for (x, v) in [(MARGIN, lo), (WIDTH - MARGIN, hi)] {
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="11" text-anchor="middle">{v:.3}</text>"#
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        HEIGHT - MARGIN,
        WIDTH - MARGIN
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Histogram of the first coordinate with `bins` bars; `marks` are drawn as
/// ticks below the axis (e.g. data points).
pub fn histogram(values: &[f64], marks: &[f64], bins: usize, title: &str) -> String {
    let bins = bins.max(1);
    let (lo, hi) = bounds(values.iter().chain(marks).copied());
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values.iter().filter(|v| v.is_finite()) {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let peak = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let (plot_w, plot_h) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let mut s = header(title);
    let bar_w = plot_w / bins as f64;
    for (i, &c) in counts.iter().enumerate() {
        let h = plot_h * c as f64 / peak;
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4a78b5"/>"##,
            MARGIN + i as f64 * bar_w,
            HEIGHT - MARGIN - h,
            (bar_w - 1.0).max(0.5),
            h
        );
    }
    for &m in marks {
        let x = MARGIN + plot_w * (m - lo) / (hi - lo);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{0}" x2="{x:.2}" y2="{1}" stroke="#c0392b"/>"##,
            HEIGHT - MARGIN,
            HEIGHT - MARGIN + 6.0
        );
    }
    axis_labels(&mut s, lo, hi);
    s.push_str("</svg>\n");
    s
}

/// Scatter plot of the first two coordinates, with `marks` in a second colour.
pub fn scatter(points: ArrayView2<'_, f64>, marks: ArrayView2<'_, f64>, title: &str) -> String {
    let xs = || points.column(0).into_iter().chain(marks.column(0)).copied();
    let ys = || points.column(1).into_iter().chain(marks.column(1)).copied();
    let (x_lo, x_hi) = bounds(xs());
    let (y_lo, y_hi) = bounds(ys());
    let (plot_w, plot_h) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let px = |x: f64| MARGIN + plot_w * (x - x_lo) / (x_hi - x_lo);
    let py = |y: f64| HEIGHT - MARGIN - plot_h * (y - y_lo) / (y_hi - y_lo);
    let mut s = header(title);
    for (cloud, colour, r) in [(points, "#4a78b5", 1.5), (marks, "#c0392b", 2.5)] {
        for row in cloud.outer_iter() {
            if row[0].is_finite() && row[1].is_finite() {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{colour}" fill-opacity="0.6"/>"#,
                    px(row[0]),
                    py(row[1])
                );
            }
        }
    }
    axis_labels(&mut s, x_lo, x_hi);
    s.push_str("</svg>\n");
    s
}
