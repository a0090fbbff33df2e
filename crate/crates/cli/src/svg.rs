//! Minimal hand-rolled SVG plots: top-down trajectory overlays and loss
//! traces. Output is deterministic (fixed-precision coordinates).

use std::fmt::Write as _;

pub struct Polyline<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Render labeled polylines into a framed square plot.
pub fn line_plot(lines: &[Polyline<'_>], x_label: &str, y_label: &str) -> String {
    let (w, h, margin) = (640.0, 480.0, 50.0);
    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for l in lines {
        for &(x, y) in &l.points {
            min.0 = min.0.min(x);
            min.1 = min.1.min(y);
            max.0 = max.0.max(x);
            max.1 = max.1.max(y);
        }
    }
    if !min.0.is_finite() {
        min = (0.0, 0.0);
        max = (1.0, 1.0);
    }
    let pad = |lo: &mut f64, hi: &mut f64| {
        if (*hi - *lo).abs() < 1e-9 {
            *lo -= 0.5;
            *hi += 0.5;
        } else {
            let p = (*hi - *lo) * 0.05;
            *lo -= p;
            *hi += p;
        }
    };
    pad(&mut min.0, &mut max.0);
    pad(&mut min.1, &mut max.1);

    let sx = (w - 2.0 * margin) / (max.0 - min.0);
    let sy = (h - 2.0 * margin) / (max.1 - min.1);
    let map = |x: f64, y: f64| {
        (
            margin + (x - min.0) * sx,
            h - margin - (y - min.1) * sy,
        )
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        out,
        r##"<rect x="{margin}" y="{margin}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        w - 2.0 * margin,
        h - 2.0 * margin
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{x_label}</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, l) in lines.iter().enumerate() {
        if l.points.is_empty() {
            continue;
        }
        let mut path = String::new();
        for (k, &(x, y)) in l.points.iter().enumerate() {
            let (px, py) = map(x, y);
            let _ = write!(path, "{}{px:.2},{py:.2} ", if k == 0 { "" } else { "" });
        }
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            path.trim_end(),
            l.color
        );
        let ly = margin + 18.0 + 18.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/>"#,
            w - margin - 120.0,
            w - margin - 95.0,
            l.color
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="12">{}</text>"#,
            w - margin - 88.0,
            ly + 4.0,
            l.label
        );
    }
    out.push_str("</svg>\n");
    out
}
