//! Minimal SVG emission: scatter, line and heatmap charts.

use std::fmt::Write;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Data-to-pixel mapping for one chart.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> Self {
        let mut x = (f64::INFINITY, f64::NEG_INFINITY);
        let mut y = (f64::INFINITY, f64::NEG_INFINITY);
        for &(a, b) in points.filter(|p| p.0.is_finite() && p.1.is_finite()) {
            x = (x.0.min(a), x.1.max(a));
            y = (y.0.min(b), y.1.max(b));
        }
        let pad = |r: (f64, f64)| {
            if !r.0.is_finite() {
                (0.0, 1.0)
            } else if r.1 - r.0 < 1e-12 {
                (r.0 - 0.5, r.1 + 0.5)
            } else {
                let p = 0.05 * (r.1 - r.0);
                (r.0 - p, r.1 + p)
            }
        };
        Self { x: pad(x), y: pad(y) }
    }

    fn px(&self, v: f64) -> f64 {
        MARGIN + (v - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 8.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" text-anchor="middle" transform="rotate(-90 12 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    s
}

fn axes(s: &mut String, f: &Frame) {
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let vx = f.x.0 + (f.x.1 - f.x.0) * k as f64 / 4.0;
        let vy = f.y.0 + (f.y.1 - f.y.0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            f.px(vx),
            y0 + 14.0,
            tick(vx)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 4.0,
            f.py(vy) + 4.0,
            tick(vy)
        );
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        let x = WIDTH - MARGIN - 110.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            y - 9.0,
            PALETTE[i % PALETTE.len()],
            x + 14.0,
            y,
            escape(name)
        );
    }
}

/// A named series of points.
pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Scatter chart, one colour per series.
pub fn scatter(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let frame = Frame::fit(series.iter().flat_map(|s| s.points.iter()));
    let mut s = open(title, x_label, y_label);
    axes(&mut s, &frame);
    for (i, ser) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        for &(x, y) in ser.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="1.5" fill="{colour}" fill-opacity="0.6"/>"#,
                frame.px(x),
                frame.py(y)
            );
        }
    }
    legend(&mut s, &series.iter().map(|x| x.name).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Line chart with markers, one colour per series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let frame = Frame::fit(series.iter().flat_map(|s| s.points.iter()));
    let mut s = open(title, x_label, y_label);
    axes(&mut s, &frame);
    for (i, ser) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        for (k, &(x, y)) in ser.points.iter().enumerate() {
            let _ = write!(d, "{}{:.1} {:.1} ", if k == 0 { "M" } else { "L" }, frame.px(x), frame.py(y));
        }
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#, d.trim_end());
        for &(x, y) in &ser.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{colour}"/>"#,
                frame.px(x),
                frame.py(y)
            );
        }
    }
    legend(&mut s, &series.iter().map(|x| x.name).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Polylines without markers, all in one colour per series; for trajectories.
pub fn paths_chart(title: &str, x_label: &str, y_label: &str, series: &[(&str, Vec<Vec<(f64, f64)>>)]) -> String {
    let frame = Frame::fit(series.iter().flat_map(|(_, p)| p.iter().flatten()));
    let mut s = open(title, x_label, y_label);
    axes(&mut s, &frame);
    for (i, (_, paths)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        for path in paths {
            let mut d = String::new();
            for (k, &(x, y)) in path.iter().enumerate() {
                let _ = write!(d, "{}{:.1} {:.1} ", if k == 0 { "M" } else { "L" }, frame.px(x), frame.py(y));
            }
            let _ = writeln!(
                s,
                r#"<path d="{}" fill="none" stroke="{colour}" stroke-opacity="0.5" stroke-width="0.8"/>"#,
                d.trim_end()
            );
        }
    }
    legend(&mut s, &series.iter().map(|x| x.0).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Heatmap of `values` (row-major over `y_centers` then `x_centers`);
/// `None` cells are drawn hatched grey.
pub fn heatmap(
    title: &str,
    x_label: &str,
    y_label: &str,
    x_centers: &[f64],
    y_centers: &[f64],
    values: &[Option<f64>],
) -> String {
    let corners: Vec<(f64, f64)> = x_centers
        .iter()
        .flat_map(|&x| y_centers.iter().map(move |&y| (x, y)))
        .collect();
    let frame = Frame::fit(corners.iter());
    let mut s = open(title, x_label, y_label);
    let max = values.iter().flatten().copied().fold(0.0f64, f64::max);
    let cell_w = if x_centers.len() > 1 {
        (frame.px(x_centers[1]) - frame.px(x_centers[0])).abs()
    } else {
        WIDTH - 2.0 * MARGIN
    };
    let cell_h = if y_centers.len() > 1 {
        (frame.py(y_centers[1]) - frame.py(y_centers[0])).abs()
    } else {
        HEIGHT - 2.0 * MARGIN
    };
    for (k, &y) in y_centers.iter().enumerate() {
        for (i, &x) in x_centers.iter().enumerate() {
            let fill = match values.get(k * x_centers.len() + i).copied().flatten() {
                Some(v) => {
                    let level = if max > 0.0 { v / max } else { 0.0 };
                    let r = (255.0 * level).round() as u8;
                    let b = (255.0 * (1.0 - level)).round() as u8;
                    format!("rgb({r},64,{b})")
                }
                None => "#cccccc".to_string(),
            };
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{fill}"/>"#,
                frame.px(x) - cell_w / 2.0,
                frame.py(y) - cell_h / 2.0,
                cell_w,
                cell_h
            );
        }
    }
    axes(&mut s, &frame);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="36" text-anchor="end">max {}</text>"#,
        WIDTH - MARGIN,
        tick(max)
    );
    s.push_str("</svg>\n");
    s
}
