//! Minimal SVG line charts. The plotted data is embedded as comments so a
//! chart can be read back without the CSV it came from.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace("--", "- -")
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    for s in series {
        let data: Vec<String> = s.points.iter().map(|(x, y)| format!("{x},{y}")).collect();
        let _ = writeln!(out, "<!-- series {}: {} -->", escape(&s.name), data.join(" "));
    }
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(out, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#, W / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for (v, x, y, anchor) in [(x0, l, b + 16.0, "start"), (x1, r, b + 16.0, "end")] {
        let _ = writeln!(out, r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-family="sans-serif" font-size="10">{v:.3}</text>"#);
    }
    for (v, y) in [(y0, b), (y1, t)] {
        let _ = writeln!(out, r#"<text x="{}" y="{y}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.3}</text>"#, l - 4.0);
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .enumerate()
            .map(|(j, &(x, y))| format!("{}{:.2} {:.2}", if j == 0 { 'M' } else { 'L' }, sx(x), sy(y)))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(out, r#"<path d="{}" stroke="{color}" stroke-width="1.5" fill="none"/>"#, path.join(" "));
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" fill="{color}">{}</text>"#,
            r - 120.0,
            t + 14.0 * (i as f64 + 1.0),
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_embeds_data_and_paths() {
        let s = vec![
            Series { name: "a".into(), points: vec![(0.0, 0.5), (1.0, 0.75)] },
            Series { name: "b<c".into(), points: vec![(0.0, 0.25)] },
        ];
        let svg = line_chart("t", "x", "y", &s);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<!-- series a: 0,0.5 1,0.75 -->"));
        assert!(svg.contains("b&lt;c"));
        assert_eq!(svg.matches("<path").count(), 3);
    }

    #[test]
    fn empty_chart_is_valid() {
        let svg = line_chart("t", "x", "y", &[]);
        assert!(svg.contains("</svg>"));
        assert!(!svg.contains("NaN"));
    }
}
