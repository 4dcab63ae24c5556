//! Minimal deterministic SVG scatter plots of the distance-to-mean axes.

use std::fmt::Write as _;

use langevin_core::MixtureModel;

const PANEL: f64 = 320.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = ["#7f7f7f", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];

/// One scatter panel; `class` picks the point colour.
#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub title: String,
    /// Component indices on the x and y axes.
    pub axes: (usize, usize),
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64, usize)>,
}

/// `‖x - μ_i‖` for the first three components.
pub fn distance_axes(x: &[f64], model: &MixtureModel) -> Vec<f64> {
    model
        .components()
        .iter()
        .take(3)
        .map(|c| c.mean().iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum::<f64>().sqrt())
        .collect()
}

/// Axis pairs `(a, b)` among the first three components.
pub fn axis_pairs(model: &MixtureModel) -> Vec<(usize, usize)> {
    let k = model.num_components().min(3);
    let mut pairs = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            pairs.push((a, b));
        }
    }
    pairs
}

/// Pairwise distance panels for labelled states.
pub fn distance_panels(states: &[&[f64]], labels: &[usize], model: &MixtureModel, title: &str) -> Vec<Panel> {
    let axes: Vec<Vec<f64>> = states.iter().map(|x| distance_axes(x, model)).collect();
    axis_pairs(model)
        .into_iter()
        .map(|(a, b)| Panel {
            title: title.to_string(),
            axes: (a, b),
            x_label: format!("‖x − μ{a}‖"),
            y_label: format!("‖x − μ{b}‖"),
            points: axes.iter().zip(labels).map(|(d, l)| (d[a], d[b], *l)).collect(),
        })
        .collect()
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Lays panels out in one row.
pub fn render(panels: &[Panel]) -> String {
    let cell = PANEL + 2.0 * MARGIN;
    let width = cell * panels.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{cell}" viewBox="0 0 {width} {cell}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{cell}" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        let ox = i as f64 * cell + MARGIN;
        let oy = MARGIN;
        let (x0, x1) = range(p.points.iter().map(|q| q.0));
        let (y0, y1) = range(p.points.iter().map(|q| q.1));
        let _ = writeln!(
            s,
            r#"<rect x="{ox}" y="{oy}" width="{PANEL}" height="{PANEL}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            ox + PANEL / 2.0,
            oy - 18.0,
            escape(&p.title)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            ox + PANEL / 2.0,
            oy + PANEL + 32.0,
            escape(&p.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
            ox - 32.0,
            oy + PANEL / 2.0,
            ox - 32.0,
            oy + PANEL / 2.0,
            escape(&p.y_label)
        );
        for (v, anchor, x, y) in [
            (x0, "start", ox, oy + PANEL + 14.0),
            (x1, "end", ox + PANEL, oy + PANEL + 14.0),
        ] {
            let _ = writeln!(s, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{v:.2}</text>"#);
        }
        for (v, y) in [(y0, oy + PANEL), (y1, oy + 10.0)] {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}" text-anchor="end">{v:.2}</text>"#, ox - 4.0);
        }
        for &(x, y, class) in &p.points {
            if !(x.is_finite() && y.is_finite()) {
                continue;
            }
            let px = ox + (x - x0) / (x1 - x0) * PANEL;
            let py = oy + PANEL - (y - y0) / (y1 - y0) * PANEL;
            let _ = writeln!(
                s,
                r#"<circle cx="{px:.2}" cy="{py:.2}" r="1.6" fill="{}" fill-opacity="0.6"/>"#,
                PALETTE[class % PALETTE.len()]
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
