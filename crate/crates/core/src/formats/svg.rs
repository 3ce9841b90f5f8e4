//! Minimal SVG polyline chart for precision/recall curves.

use std::fmt::Write;

/// One labelled curve: (recall, precision) points.
pub struct PrSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Render PR curves into a self-contained SVG document. Both axes span
/// [0, 1]; recall on x, precision on y.
pub fn render_pr_svg(series: &[PrSeries], title: &str) -> String {
    let (w, h) = (480.0, 360.0);
    let margin = 48.0;
    let plot_w = w - 2.0 * margin;
    let plot_h = h - 2.0 * margin;
    let sx = |r: f64| margin + r.clamp(0.0, 1.0) * plot_w;
    let sy = |p: f64| h - margin - p.clamp(0.0, 1.0) * plot_h;

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        w / 2.0,
        title
    )
    .unwrap();
    // axes with 0.2 grid lines
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        writeln!(
            out,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            sx(t),
            sy(0.0),
            sx(t),
            sy(1.0)
        )
        .unwrap();
        writeln!(
            out,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            sx(0.0),
            sy(t),
            sx(1.0),
            sy(t)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="10">{:.1}</text>"#,
            sx(t),
            h - margin + 16.0,
            t
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="10">{:.1}</text>"#,
            margin - 6.0,
            sy(t) + 3.0,
            t
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{b:.1}" stroke="black"/><line x1="{m}" y1="{b:.1}" x2="{r:.1}" y2="{b:.1}" stroke="black"/>"#,
        m = margin,
        b = h - margin,
        r = w - margin
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12">recall</text>"#,
        w / 2.0,
        h - 10.0
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="14" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {0:.1})">precision</text>"#,
        h / 2.0
    )
    .unwrap();

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = s
            .points
            .iter()
            .map(|&(r, p)| format!("{:.2},{:.2}", sx(r), sy(p)))
            .collect();
        writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            color,
            points.join(" ")
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="{}">{}</text>"#,
            margin + 8.0,
            margin + 14.0 + 14.0 * i as f64,
            color,
            s.label
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_contains_polyline_per_series() {
        let series = vec![
            PrSeries {
                label: "a".into(),
                points: vec![(0.0, 1.0), (0.5, 0.8), (1.0, 0.2)],
            },
            PrSeries {
                label: "b".into(),
                points: vec![(0.0, 0.9), (1.0, 0.1)],
            },
        ];
        let svg = render_pr_svg(&series, "pr");
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
