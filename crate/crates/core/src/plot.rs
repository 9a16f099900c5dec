//! Minimal deterministic SVG emission for curve and bar reports. Fixed
//! canvas, fixed decimal formatting, no timestamps, so identical inputs
//! yield identical bytes.

const W: f64 = 640.0;
const H: f64 = 440.0;
const MARGIN: f64 = 60.0;

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\" \
         font-family=\"sans-serif\">{}</text>\n",
        W / 2.0,
        xml_escape(title)
    )
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(x_label: &str, y_label: &str) -> String {
    format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{lbl}\" font-size=\"12\" text-anchor=\"middle\" \
         font-family=\"sans-serif\">{x}</text>\n\
         <text x=\"16\" y=\"{cy}\" font-size=\"12\" text-anchor=\"middle\" \
         font-family=\"sans-serif\" transform=\"rotate(-90 16 {cy})\">{y}</text>\n",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN / 2.0,
        t = MARGIN / 2.0,
        cx = W / 2.0,
        lbl = H - 16.0,
        cy = H / 2.0,
        x = xml_escape(x_label),
        y = xml_escape(y_label),
    )
}

/// Line chart over (x, y) points with linear axes spanning the data range.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let mut svg = header(title);
    svg.push_str(&axes(x_label, y_label));
    if !points.is_empty() {
        let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 1.5 * MARGIN);
        let py = |y: f64| (H - MARGIN) - (y - y0) / (y1 - y0) * (H - 1.5 * MARGIN);
        let coords: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{},{}", fmt(px(x)), fmt(py(y))))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n",
            coords.join(" ")
        ));
        // endpoint tick labels
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\" font-family=\"sans-serif\">{}</text>\n",
            fmt(px(x0)), fmt(H - MARGIN + 14.0), fmt(x0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\" font-family=\"sans-serif\">{}</text>\n",
            fmt(px(x1)), fmt(H - MARGIN + 14.0), fmt(x1)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\" font-family=\"sans-serif\">{}</text>\n",
            fmt(MARGIN - 6.0), fmt(py(y0) + 4.0), fmt(y0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\" font-family=\"sans-serif\">{}</text>\n",
            fmt(MARGIN - 6.0), fmt(py(y1) + 4.0), fmt(y1)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Horizontal bar chart for signed values (e.g. relevance or z profiles).
pub fn bar_chart(title: &str, labels: &[String], values: &[f64]) -> String {
    assert_eq!(labels.len(), values.len());
    let mut svg = header(title);
    let n = labels.len().max(1);
    let vmax = values.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-12);
    let row_h = ((H - 2.0 * MARGIN) / n as f64).min(28.0);
    let mid = W * 0.55;
    let span = W * 0.38;
    for (i, (label, &v)) in labels.iter().zip(values.iter()).enumerate() {
        let y = MARGIN + i as f64 * row_h;
        let w = (v.abs() / vmax) * span / 2.0;
        let (x, fill) = if v >= 0.0 {
            (mid, "steelblue")
        } else {
            (mid - w, "indianred")
        };
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\"/>\n",
            fmt(x),
            fmt(y),
            fmt(w.max(0.5)),
            fmt(row_h * 0.7),
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\" font-family=\"sans-serif\">{}</text>\n",
            fmt(mid - span / 2.0 - 8.0),
            fmt(y + row_h * 0.5),
            xml_escape(label)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"start\" font-family=\"sans-serif\">{}</text>\n",
            fmt(mid + span / 2.0 + 8.0),
            fmt(y + row_h * 0.5),
            fmt(v)
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(mid),
        fmt(MARGIN - 10.0),
        fmt(mid),
        fmt(MARGIN + n as f64 * row_h)
    ));
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_identical_bytes() {
        let pts = [(0.0, 0.5), (1.0, 0.8), (2.5, 0.9)];
        let a = line_chart("curve", "x", "y", &pts);
        let b = line_chart("curve", "x", "y", &pts);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.ends_with("</svg>\n"));
    }

    #[test]
    fn bar_chart_handles_signed_values() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let svg = bar_chart("bars", &labels, &[0.5, -0.25]);
        assert!(svg.contains("steelblue"));
        assert!(svg.contains("indianred"));
    }
}
