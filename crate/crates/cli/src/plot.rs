//! Deterministic SVG emitters: line charts, heatmaps and 3-D scatters.
//!
//! Output depends only on the input values; numbers are printed with a
//! fixed precision and nothing time- or environment-dependent is embedded.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("nothing to plot: {0}")]
    Empty(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{0}")]
    Shape(String),
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Axes {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub z_label: String,
}

impl Axes {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Axes {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            z_label: String::new(),
        }
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, axes: &Axes) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        esc(&axes.title)
    );
}

/// Tick label with no trailing zeros beyond what the range needs.
fn tick(v: f64, span: f64) -> String {
    let digits = if span >= 10.0 {
        0
    } else if span >= 1.0 {
        1
    } else if span >= 0.1 {
        2
    } else {
        3
    };
    let s = format!("{v:.digits$}");
    if s == "-0" || s.chars().all(|c| c == '-' || c == '0' || c == '.') {
        format!("{:.digits$}", 0.0)
    } else {
        s
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 0.0 { lo.abs() * 0.05 } else { 0.5 };
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

/// One `<polyline>` per series, with axes, ticks and a legend.
pub fn line_svg(series: &[Series], axes: &Axes) -> Result<String, PlotError> {
    if series.is_empty() {
        return Err(PlotError::Empty("no series".into()));
    }
    for s in series {
        if s.points.is_empty() {
            return Err(PlotError::Empty(format!("series '{}' has no points", s.name)));
        }
        if s.points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(PlotError::NonFinite(format!("series '{}'", s.name)));
        }
    }
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = range(all().map(|p| p.0));
    let (y0, y1) = range(all().map(|p| p.1));
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    header(&mut out, axes);
    let _ = writeln!(
        out,
        r##"<line class="axis" x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#000"/>"##,
        TOP + ph,
        LEFT + pw,
        TOP + ph
    );
    let _ = writeln!(
        out,
        r##"<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="#000"/>"##,
        TOP + ph
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            TOP + ph + 16.0,
            tick(xv, x1 - x0)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            sy(yv) + 4.0,
            tick(yv, y1 - y0)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 18.0,
        esc(&axes.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        esc(&axes.y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="series" data-name="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            esc(&s.name),
            pts.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 24.0,
            ly + 4.0,
            esc(&s.name)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Blue (low) to red (high) through white.
fn heat_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (u, u, 1.0)
    } else {
        let u = (t - 0.5) / 0.5;
        (1.0, 1.0 - u, 1.0 - u)
    };
    format!(
        "#{:02x}{:02x}{:02x}",
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8
    )
}

/// One `<rect class="cell">` per matrix entry, row 0 at the top.
pub fn heatmap_svg(
    values: &[Vec<f64>],
    row_labels: &[String],
    col_labels: &[String],
    axes: &Axes,
) -> Result<String, PlotError> {
    let rows = values.len();
    if rows == 0 || values[0].is_empty() {
        return Err(PlotError::Empty("empty matrix".into()));
    }
    let cols = values[0].len();
    if values.iter().any(|r| r.len() != cols) {
        return Err(PlotError::Shape("ragged matrix".into()));
    }
    if row_labels.len() != rows || col_labels.len() != cols {
        return Err(PlotError::Shape("label count does not match matrix shape".into()));
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PlotError::NonFinite("matrix".into()));
    }
    let (lo, hi) = range(values.iter().flatten().copied());
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let cw = pw / cols as f64;
    let ch = ph / rows as f64;
    let label_every_r = rows.div_ceil(16);
    let label_every_c = cols.div_ceil(16);

    let mut out = String::new();
    header(&mut out, axes);
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<rect class="cell" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{} / {}: {:.4}</title></rect>"#,
                LEFT + j as f64 * cw,
                TOP + i as f64 * ch,
                cw,
                ch,
                heat_color((v - lo) / (hi - lo)),
                esc(&row_labels[i]),
                esc(&col_labels[j]),
                v
            );
        }
        if i % label_every_r == 0 {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                LEFT - 4.0,
                TOP + (i as f64 + 0.5) * ch + 4.0,
                esc(&row_labels[i])
            );
        }
    }
    for (j, l) in col_labels.iter().enumerate() {
        if j % label_every_c == 0 {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                LEFT + (j as f64 + 0.5) * cw,
                TOP + ph + 16.0,
                esc(l)
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 18.0,
        esc(&axes.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        esc(&axes.y_label)
    );
    // color bar
    let bx = LEFT + pw + 30.0;
    for k in 0..10 {
        let t = 1.0 - k as f64 / 9.0;
        let _ = writeln!(
            out,
            r#"<rect class="scale" x="{bx:.1}" y="{:.1}" width="16" height="{:.1}" fill="{}"/>"#,
            TOP + k as f64 * ph / 10.0,
            ph / 10.0,
            heat_color(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
        bx + 22.0,
        TOP + 10.0,
        tick(hi, hi - lo)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
        bx + 22.0,
        TOP + ph,
        tick(lo, hi - lo)
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Oblique projection of 3-D points; `groups[i]` picks the color and
/// legend entry of point `i`.
pub fn scatter3_svg(points: &[[f64; 3]], groups: &[String], axes: &Axes) -> Result<String, PlotError> {
    if points.is_empty() {
        return Err(PlotError::Empty("no points".into()));
    }
    if groups.len() != points.len() {
        return Err(PlotError::Shape("one group label per point is required".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PlotError::NonFinite("points".into()));
    }
    let ranges: Vec<(f64, f64)> = (0..3).map(|k| range(points.iter().map(|p| p[k]))).collect();
    let norm = |p: &[f64; 3], k: usize| (p[k] - ranges[k].0) / (ranges[k].1 - ranges[k].0) - 0.5;
    // x to the right, y up, z receding up-right at 30 degrees
    let (cos, sin) = (0.866_025_403_784_438_6, 0.5);
    let size = (H - TOP - BOTTOM) * 0.62;
    let cx = LEFT + (W - LEFT - RIGHT) / 2.0 - size * 0.2;
    let cy = TOP + (H - TOP - BOTTOM) / 2.0 + size * 0.15;
    let proj = |a: f64, b: f64, c: f64| {
        (
            cx + size * (a + 0.5 * c * cos),
            cy - size * (b + 0.5 * c * sin),
        )
    };

    let mut names: Vec<&String> = groups.iter().collect();
    names.sort();
    names.dedup();

    let mut out = String::new();
    header(&mut out, axes);
    let o = proj(-0.5, -0.5, -0.5);
    let ends = [proj(0.5, -0.5, -0.5), proj(-0.5, 0.5, -0.5), proj(-0.5, -0.5, 0.5)];
    let labels = [&axes.x_label, &axes.y_label, &axes.z_label];
    for (e, l) in ends.iter().zip(labels) {
        let _ = writeln!(
            out,
            r##"<line class="axis" x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#000"/>"##,
            o.0, o.1, e.0, e.1
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            e.0 + 4.0,
            e.1 - 4.0,
            esc(l)
        );
    }
    for (p, g) in points.iter().zip(groups) {
        let k = names.binary_search(&g).unwrap_or(0);
        let (x, y) = proj(norm(p, 0), norm(p, 1), norm(p, 2));
        let _ = writeln!(
            out,
            r#"<circle class="point" cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
            PALETTE[k % PALETTE.len()]
        );
    }
    for (k, name) in names.iter().enumerate() {
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{}"/>"#,
            lx + 6.0,
            ly,
            PALETTE[k % PALETTE.len()]
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 16.0,
            ly + 4.0,
            esc(name)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
