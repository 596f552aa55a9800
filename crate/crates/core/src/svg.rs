//! Minimal static SVG bar charts.

use std::fmt::Write as _;

pub struct Bar {
    pub label: String,
    pub value: f64,
    /// Half-length of a symmetric error bar.
    pub error: Option<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Vertical bars on a zero baseline, with optional error whiskers.
pub fn bar_chart(title: &str, x_label: &str, y_label: &str, bars: &[Bar]) -> String {
    let (w, h) = (80.0 + 60.0 * bars.len().max(1) as f64, 320.0);
    let (left, bottom, top) = (60.0, 260.0, 40.0);
    let max = bars.iter().map(|b| b.value + b.error.unwrap_or(0.0)).fold(0.0f64, f64::max).max(1e-12);
    let y = |v: f64| bottom - (bottom - top) * (v.max(0.0) / max);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{left}" y1="{bottom}" x2="{}" y2="{bottom}" stroke="black"/>"#, w - 10.0);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>"#);
    for i in 0..=4 {
        let v = max * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#, left - 4.0, y(v) + 4.0, v);
    }
    for (i, b) in bars.iter().enumerate() {
        let x = left + 20.0 + 60.0 * i as f64;
        let _ = writeln!(
            s,
            r##"<rect x="{x}" y="{:.2}" width="40" height="{:.2}" fill="#4a78b5"/>"##,
            y(b.value),
            bottom - y(b.value)
        );
        if let Some(e) = b.error {
            let cx = x + 20.0;
            let _ = writeln!(
                s,
                r#"<line x1="{cx}" y1="{:.2}" x2="{cx}" y2="{:.2}" stroke="black"/>"#,
                y(b.value + e),
                y(b.value - e)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x + 20.0,
            bottom + 14.0,
            escape(&b.label)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        escape(y_label)
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_one_rect_per_bar() {
        let bars = vec![
            Bar { label: "a<b".into(), value: 0.5, error: Some(0.1) },
            Bar { label: "c".into(), value: 0.25, error: None },
        ];
        let svg = bar_chart("t", "x", "y", &bars);
        assert_eq!(svg.matches("<rect").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
