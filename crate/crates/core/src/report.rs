//! Hand-emitted SVG charts: scatter (2-D and projected 3-D) with centroid
//! markers, line/trend charts, the SSE-vs-k curve and a correlation heatmap.

use std::fmt::Write as _;

use chrono::{DateTime, Utc};

use crate::matrix::Matrix;
use crate::stats::CorrelationMatrix;

pub const WIDTH: f64 = 720.0;
pub const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Projection used for 3-D scatters: azimuth 45°, elevation 30°.
pub const AZIMUTH_DEG: f64 = 45.0;
pub const ELEVATION_DEG: f64 = 30.0;

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// Identity stamped into every chart. `generated_at` is left out of
/// reproducible runs.
#[derive(Debug, Clone, Default)]
pub struct ChartMeta {
    pub run_id: String,
    pub seed: u64,
    pub generated_at: Option<DateTime<Utc>>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Compact number for labels.
fn num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
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

struct Canvas {
    out: String,
}

impl Canvas {
    fn new(title: &str, meta: &ChartMeta) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(out, "<desc>run_id={} seed={}</desc>", esc(&meta.run_id), meta.seed);
        if let Some(t) = meta.generated_at {
            let _ = writeln!(out, "<!-- generated {} -->", t.to_rfc3339());
        }
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            (WIDTH - MARGIN_R + MARGIN_L) / 2.0,
            esc(title)
        );
        Canvas { out }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

#[derive(Debug, Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Scale {
    fn new(values: impl Iterator<Item = f64>, a: f64, b: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = (hi - lo) * 0.03;
        Scale {
            lo: lo - pad,
            hi: hi + pad,
            a,
            b,
        }
    }

    fn map(&self, v: f64) -> f64 {
        self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)
    }
}

fn axes(c: &mut Canvas, x: &Scale, y: &Scale, x_label: &str, y_label: &str, x_ticks: bool) {
    let (x0, x1) = (MARGIN_L, WIDTH - MARGIN_R);
    let (y0, y1) = (HEIGHT - MARGIN_B, MARGIN_T);
    let o = &mut c.out;
    let _ = writeln!(
        o,
        r##"<g stroke="#333" fill="none"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"##
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yv = y.lo + f * (y.hi - y.lo);
        let py = y.map(yv);
        let _ = writeln!(
            o,
            r##"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
            x0 - 6.0,
            py + 4.0,
            num(yv)
        );
        if x_ticks {
            let xv = x.lo + f * (x.hi - x.lo);
            let _ = writeln!(
                o,
                r##"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"##,
                x.map(xv),
                y0 + 16.0,
                num(xv)
            );
        }
    }
    let _ = writeln!(
        o,
        r##"<text x="{}" y="{}" text-anchor="middle">{}</text>"##,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        esc(x_label)
    );
    let _ = writeln!(
        o,
        r##"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"##,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(y_label)
    );
}

fn legend(c: &mut Canvas, entries: &[(String, &str)]) {
    let x = WIDTH - MARGIN_R + 12.0;
    for (i, (name, col)) in entries.iter().enumerate() {
        let y = MARGIN_T + 10.0 + i as f64 * 16.0;
        let _ = writeln!(
            c.out,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{col}"/><text x="{}" y="{}">{}</text>"#,
            y - 9.0,
            x + 14.0,
            y,
            esc(name)
        );
    }
}

/// Scatter of labelled points with centroid crosses. Points and centroids
/// are already in chart coordinates (data units).
pub fn scatter_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[(f64, f64)],
    labels: &[usize],
    centroids: &[(f64, f64)],
    meta: &ChartMeta,
) -> String {
    let mut c = Canvas::new(title, meta);
    let all = points.iter().chain(centroids);
    let xs = Scale::new(all.clone().map(|p| p.0), MARGIN_L, WIDTH - MARGIN_R);
    let ys = Scale::new(all.map(|p| p.1), HEIGHT - MARGIN_B, MARGIN_T);
    axes(&mut c, &xs, &ys, x_label, y_label, true);
    let k = labels.iter().max().map(|m| m + 1).unwrap_or(0).max(centroids.len());
    for cluster in 0..k {
        let _ = writeln!(c.out, r#"<g fill="{}" fill-opacity="0.5">"#, color(cluster));
        for (p, _) in points.iter().zip(labels).filter(|(_, l)| **l == cluster) {
            let _ = writeln!(
                c.out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="1.8"/>"#,
                xs.map(p.0),
                ys.map(p.1)
            );
        }
        c.out.push_str("</g>\n");
    }
    for (i, p) in centroids.iter().enumerate() {
        let (x, y) = (xs.map(p.0), ys.map(p.1));
        let _ = writeln!(
            c.out,
            r##"<g class="centroid" stroke="#000" stroke-width="2.5"><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/></g><circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{}" stroke="#000"/>"##,
            x - 7.0,
            y - 7.0,
            x + 7.0,
            y + 7.0,
            x - 7.0,
            y + 7.0,
            x + 7.0,
            y - 7.0,
            color(i)
        );
    }
    let counts: Vec<usize> = (0..k).map(|cl| labels.iter().filter(|l| **l == cl).count()).collect();
    let entries: Vec<(String, &str)> = (0..k)
        .map(|i| (format!("cluster {i} (n={})", counts[i]), color(i)))
        .collect();
    legend(&mut c, &entries);
    c.finish()
}

/// Orthographic projection of 3-D rows onto the view plane.
pub fn project_3d(points: &Matrix) -> Vec<(f64, f64)> {
    let az = AZIMUTH_DEG.to_radians();
    let el = ELEVATION_DEG.to_radians();
    points
        .iter_rows()
        .map(|r| {
            let (x, y, z) = (r[0], r[1], r[2]);
            let u = x * az.cos() - y * az.sin();
            let v = (x * az.sin() + y * az.cos()) * el.sin() + z * el.cos();
            (u, v)
        })
        .collect()
}

/// Line chart over a shared time axis, one colour per series.
pub fn line_svg(
    title: &str,
    y_label: &str,
    keys: &[DateTime<Utc>],
    series: &[(String, Vec<f64>)],
    meta: &ChartMeta,
) -> String {
    let mut c = Canvas::new(title, meta);
    let n = keys.len();
    let xs = Scale::new([0.0, n.saturating_sub(1) as f64].into_iter(), MARGIN_L, WIDTH - MARGIN_R);
    let ys = Scale::new(
        series.iter().flat_map(|(_, v)| v.iter().copied()),
        HEIGHT - MARGIN_B,
        MARGIN_T,
    );
    axes(&mut c, &xs, &ys, "time", y_label, false);
    if n > 0 {
        for i in [0, n / 2, n - 1] {
            let _ = writeln!(
                c.out,
                r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
                xs.map(i as f64),
                HEIGHT - MARGIN_B + 16.0,
                keys[i].format("%Y-%m-%d")
            );
        }
    }
    for (si, (_, values)) in series.iter().enumerate() {
        let mut d = String::new();
        let mut pen_down = false;
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                pen_down = false;
                continue;
            }
            let _ = write!(
                d,
                "{}{:.2},{:.2} ",
                if pen_down { "L" } else { "M" },
                xs.map(i as f64),
                ys.map(*v)
            );
            pen_down = true;
        }
        let _ = writeln!(
            c.out,
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.2"/>"#,
            d.trim_end(),
            color(si)
        );
    }
    let entries: Vec<(String, &str)> = series
        .iter()
        .enumerate()
        .map(|(i, (name, _))| (name.clone(), color(i)))
        .collect();
    legend(&mut c, &entries);
    c.finish()
}

/// Shades `[start, end]` index ranges on a line chart (used for flagged dips).
pub fn with_bands(svg: &str, n: usize, bands: &[(usize, usize)]) -> String {
    if bands.is_empty() || n == 0 {
        return svg.to_string();
    }
    let xs = Scale::new([0.0, n.saturating_sub(1) as f64].into_iter(), MARGIN_L, WIDTH - MARGIN_R);
    let mut rects = String::new();
    for (a, b) in bands {
        let x0 = xs.map(*a as f64 - 0.5);
        let x1 = xs.map(*b as f64 + 0.5);
        let _ = writeln!(
            rects,
            r##"<rect class="dip" x="{x0:.2}" y="{MARGIN_T}" width="{:.2}" height="{}" fill="#d62728" fill-opacity="0.12"/>"##,
            x1 - x0,
            HEIGHT - MARGIN_B - MARGIN_T
        );
    }
    // drawn just before the closing tag so bands sit on top of the white background
    let cut = svg.rfind("</svg>").unwrap_or(svg.len());
    format!("{}{}{}", &svg[..cut], rects, &svg[cut..])
}

/// SSE against k with the chosen knee marked.
pub fn knee_svg(curve: &[(usize, f64)], chosen_k: Option<usize>, meta: &ChartMeta) -> String {
    let mut c = Canvas::new("SSE vs. number of clusters", meta);
    let xs = Scale::new(curve.iter().map(|p| p.0 as f64), MARGIN_L, WIDTH - MARGIN_R);
    let ys = Scale::new(curve.iter().map(|p| p.1), HEIGHT - MARGIN_B, MARGIN_T);
    axes(&mut c, &xs, &ys, "k", "SSE", false);
    let mut d = String::new();
    for (i, (k, s)) in curve.iter().enumerate() {
        let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, xs.map(*k as f64), ys.map(*s));
        let _ = writeln!(
            c.out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{k}</text>"#,
            xs.map(*k as f64),
            HEIGHT - MARGIN_B + 16.0
        );
    }
    let _ = writeln!(c.out, r##"<path d="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##, d.trim_end());
    for (k, s) in curve {
        let _ = writeln!(
            c.out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4"/>"##,
            xs.map(*k as f64),
            ys.map(*s)
        );
    }
    if let Some(kk) = chosen_k {
        if let Some((k, s)) = curve.iter().find(|p| p.0 == kk) {
            let (x, y) = (xs.map(*k as f64), ys.map(*s));
            let _ = writeln!(
                c.out,
                r##"<g class="knee"><line x1="{x:.2}" y1="{MARGIN_T}" x2="{x:.2}" y2="{}" stroke="#d62728" stroke-dasharray="4 3"/><circle cx="{x:.2}" cy="{y:.2}" r="6" fill="none" stroke="#d62728" stroke-width="2"/><text x="{:.2}" y="{:.2}" fill="#d62728">knee k={k}</text></g>"##,
                HEIGHT - MARGIN_B,
                x + 8.0,
                y - 8.0
            );
        }
    }
    c.finish()
}

fn heat_color(r: f64) -> String {
    // blue (-1) through white (0) to red (+1)
    let t = r.clamp(-1.0, 1.0);
    let (rr, gg, bb) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", rr.round() as u8, gg.round() as u8, bb.round() as u8)
}

/// Correlation heatmap. Undefined cells are hatched and labelled NA.
pub fn heatmap_svg(title: &str, m: &CorrelationMatrix, meta: &ChartMeta) -> String {
    let mut c = Canvas::new(title, meta);
    let n = m.names.len().max(1);
    let left = 130.0;
    let top = MARGIN_T + 20.0;
    let size = ((HEIGHT - top - 30.0) / n as f64).min((WIDTH - left - 40.0) / n as f64);
    c.out.push_str(
        r##"<defs><pattern id="hatch" width="6" height="6" patternUnits="userSpaceOnUse" patternTransform="rotate(45)"><line x1="0" y1="0" x2="0" y2="6" stroke="#999" stroke-width="2"/></pattern></defs>
"##,
    );
    for (i, name) in m.names.iter().enumerate() {
        let _ = writeln!(
            c.out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            top + (i as f64 + 0.5) * size + 4.0,
            esc(name)
        );
        let _ = writeln!(
            c.out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            left + (i as f64 + 0.5) * size,
            top - 6.0,
            esc(name)
        );
        for j in 0..m.names.len() {
            let (x, y) = (left + j as f64 * size, top + i as f64 * size);
            let (fill, label) = match m.values[i][j] {
                Some(r) => (heat_color(r), format!("{r:.2}")),
                None => ("url(#hatch)".to_string(), "NA".to_string()),
            };
            let _ = writeln!(
                c.out,
                r##"<rect class="cell" data-row="{i}" data-col="{j}" x="{x:.1}" y="{y:.1}" width="{size:.1}" height="{size:.1}" fill="{fill}" stroke="#fff"/><text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"##,
                x + size / 2.0,
                y + size / 2.0 + 4.0
            );
        }
    }
    c.finish()
}
