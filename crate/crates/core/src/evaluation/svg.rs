//! Bare-bones SVG figures: line charts (learning curves, ROC) and a
//! confusion-matrix heat map.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        width / 2.0,
        escape(title)
    );
}

/// Line chart over explicit axis ranges `(x0, x1)`, `(y0, y1)`.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    x_range: (f64, f64),
    y_range: (f64, f64),
    series: &[Series<'_>],
) -> String {
    let mut out = String::new();
    header(&mut out, title, W, H);
    let (pw, ph) = (W - 2.0 * MARGIN, H - 2.0 * MARGIN);
    let span = |r: (f64, f64)| if r.1 > r.0 { r.1 - r.0 } else { 1.0 };
    let sx = |x: f64| MARGIN + (x - x_range.0) / span(x_range) * pw;
    let sy = |y: f64| H - MARGIN - (y - y_range.0) / span(y_range) * ph;

    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x_range.0 + f * span(x_range);
        let yv = y_range.0 + f * span(y_range);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            H - MARGIN + 16.0,
            trim(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN - 6.0,
            sy(yv) + 4.0,
            trim(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
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
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{color}" text-anchor="end">{}</text>"#,
            W - MARGIN - 8.0,
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn trim(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Heat map of `counts[actual][predicted]` with class names on both axes.
pub fn confusion_heatmap(title: &str, counts: &[Vec<u64>], names: &[String]) -> String {
    let n = counts.len().max(1);
    let cell = 24.0;
    let left = 90.0;
    let top = 90.0;
    let width = left + cell * n as f64 + 20.0;
    let height = top + cell * n as f64 + 40.0;
    let max = counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let mut out = String::new();
    header(&mut out, title, width, height);
    for (i, row) in counts.iter().enumerate() {
        let y = top + cell * i as f64;
        let name = names.get(i).map(String::as_str).unwrap_or("");
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#,
            left - 4.0,
            y + cell * 0.65,
            escape(name)
        );
        let _ = writeln!(
            out,
            r#"<text x="{0:.1}" y="{1:.1}" text-anchor="start" font-size="10" transform="rotate(-60 {0:.1} {1:.1})">{2}</text>"#,
            left + cell * i as f64 + cell / 2.0,
            top - 4.0,
            escape(name)
        );
        for (j, &c) in row.iter().enumerate() {
            let x = left + cell * j as f64;
            let shade = 255.0 - 200.0 * (c as f64 / max);
            let _ = writeln!(
                out,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="rgb({0:.0},{0:.0},255)" stroke="white"/>"#,
                shade
            );
            if c > 0 {
                let _ = writeln!(
                    out,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{c}</text>"#,
                    x + cell / 2.0,
                    y + cell * 0.65
                );
            }
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">predicted (columns) / actual (rows)</text>"#,
        width / 2.0,
        height - 12.0
    );
    out.push_str("</svg>\n");
    out
}

/// ROC chart: micro average, then one line per defined class.
pub fn roc_chart(title: &str, report: &super::RocReport, names: &[String]) -> String {
    let mut owned: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    if let Some(m) = &report.micro {
        owned.push((format!("micro (AUC {:.2})", m.auc), m.fpr.iter().copied().zip(m.tpr.iter().copied()).collect()));
    }
    for (c, curve) in report.per_class.iter().enumerate() {
        if let Some(r) = curve {
            let name = names.get(c).cloned().unwrap_or_else(|| c.to_string());
            owned.push((
                format!("{c} {name} ({:.2})", r.auc),
                r.fpr.iter().copied().zip(r.tpr.iter().copied()).collect(),
            ));
        }
    }
    let series: Vec<Series<'_>> = owned
        .iter()
        .map(|(n, p)| Series {
            name: n,
            points: p.clone(),
        })
        .collect();
    line_chart(title, "false positive rate", "true positive rate", (0.0, 1.0), (0.0, 1.0), &series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let s = [Series {
            name: "a<b",
            points: vec![(1.0, 0.5), (2.0, 0.25)],
        }];
        let svg = line_chart("loss", "epoch", "loss", (1.0, 2.0), (0.0, 1.0), &s);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains("<polyline"));
        let names = vec!["x".to_string(), "y".to_string()];
        let h = confusion_heatmap("cm", &[vec![3, 1], vec![0, 4]], &names);
        assert_eq!(h.matches("<rect x=").count(), 4);
    }
}
