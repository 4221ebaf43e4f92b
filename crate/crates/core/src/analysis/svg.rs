//! Minimal self-contained SVG rendering: a labelled heatmap and a line chart
//! with error bars. Output depends only on the inputs, so files are
//! byte-stable across runs.

use std::fmt::Write;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Linear white-to-blue ramp for `t` in `[0, 1]`.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0))
}

/// Heatmap of `values[row][col]`, colored linearly from 0 to the largest
/// value (all cells white when everything is zero).
pub fn heatmap(title: &str, row_labels: &[String], col_labels: &[String], values: &[Vec<f64>]) -> String {
    const CELL: f64 = 48.0;
    const LEFT: f64 = 70.0;
    const TOP: f64 = 50.0;
    let rows = row_labels.len();
    let cols = col_labels.len();
    let max = values
        .iter()
        .flatten()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let width = LEFT + CELL * cols as f64 + 20.0;
    let height = TOP + CELL * rows as f64 + 40.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{LEFT}" y="20" font-size="14">{}</text>"#, escape(title));
    for (j, label) in col_labels.iter().enumerate() {
        let x = LEFT + CELL * (j as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, TOP - 8.0, escape(label));
    }
    for (i, label) in row_labels.iter().enumerate() {
        let y = TOP + CELL * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, LEFT - 8.0, y + CELL * 0.6, escape(label));
        for j in 0..cols {
            let v = values[i][j];
            let t = if max > 0.0 { v / max } else { 0.0 };
            let x = LEFT + CELL * j as f64;
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="#999999"><title>{} {}: {v:e}</title></rect>"##,
                ramp(t),
                escape(label),
                escape(&col_labels[j])
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="{}">scale: 0 (white) to {max:.3e} (blue)</text>"#,
        TOP + CELL * rows as f64 + 24.0
    );
    s.push_str("</svg>\n");
    s
}

/// One plotted series: `(x, y, error)` points in drawing order.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64, f64)>,
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Line chart with a log-scaled x axis and symmetric error bars.
pub fn line_chart_log_x(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const L: f64 = 60.0;
    const R: f64 = 130.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let xs: Vec<f64> = pts().map(|p| p.0.max(1e-12).ln()).collect();
    let (mut x0, mut x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let (mut y0, mut y1) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1 - p.2), b.max(p.1 + p.2)));
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| L + (x.max(1e-12).ln() - x0) / (x1 - x0) * (W - L - R);
    let py = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{L}" y="20" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{L} {T} V{} H{}" fill="none" stroke="black"/>"#,
        H - B,
        W - R
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (L + W - R) / 2.0, H - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0,
        escape(y_label)
    );
    let mut ticks: Vec<f64> = pts().map(|p| p.0).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x}</text>"#, px(x), H - B + 16.0);
    }
    for y in [y0, (y0 + y1) / 2.0, y1] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y:.3}</text>"#, L - 6.0, py(y) + 4.0);
    }
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let d: Vec<String> = ser
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{}{:.2} {:.2}", if i == 0 { 'M' } else { 'L' }, px(p.0), py(p.1)))
            .collect();
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, d.join(" "));
        for p in &ser.points {
            let (x, lo, hi) = (px(p.0), py(p.1 - p.2), py(p.1 + p.2));
            let _ = writeln!(s, r#"<path d="M{x:.2} {lo:.2} V{hi:.2}" stroke="{color}"/>"#);
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, py(p.1));
        }
        let ly = T + 16.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="12" height="12" fill="{color}"/>"#, W - R + 10.0, ly);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, W - R + 28.0, ly + 10.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parses(svg: &str) -> roxmltree::Document<'_> {
        roxmltree::Document::parse(svg).expect("well-formed svg")
    }

    #[test]
    fn zero_heatmap_is_uniform() {
        let rows: Vec<String> = (0..3).map(|i| format!("r{i}")).collect();
        let cols = vec!["c<1>".to_string()];
        let svg = heatmap("t & t", &rows, &cols, &vec![vec![0.0]; 3]);
        let doc = parses(&svg);
        let fills: Vec<_> = doc
            .descendants()
            .filter(|n| n.has_tag_name("rect"))
            .map(|n| n.attribute("fill").unwrap().to_string())
            .collect();
        assert_eq!(fills.len(), 3);
        assert!(fills.iter().all(|f| f == "#ffffff"));
    }

    #[test]
    fn largest_cell_gets_the_darkest_color() {
        let rows = vec!["a".to_string(), "b".to_string()];
        let cols = vec!["1".to_string()];
        let svg = heatmap("t", &rows, &cols, &[vec![0.5], vec![2.0]]);
        let doc = parses(&svg);
        let fills: Vec<_> = doc
            .descendants()
            .filter(|n| n.has_tag_name("rect"))
            .map(|n| n.attribute("fill").unwrap().to_string())
            .collect();
        assert_eq!(fills[1], ramp(1.0));
        assert_ne!(fills[0], fills[1]);
    }

    #[test]
    fn chart_is_well_formed_including_degenerate_input() {
        let s = vec![
            Series {
                label: "a".into(),
                points: vec![(25.0, 0.5, 0.1), (100.0, 0.7, 0.05)],
            },
            Series {
                label: "b".into(),
                points: vec![(25.0, 0.6, 0.0)],
            },
        ];
        parses(&line_chart_log_x("t", "x", "y", &s));
        parses(&line_chart_log_x("t", "x", "y", &[]));
        let flat = [Series {
            label: "c".into(),
            points: vec![(10.0, 0.5, 0.0)],
        }];
        assert!(!line_chart_log_x("t", "x", "y", &flat).contains("NaN"));
    }
}
