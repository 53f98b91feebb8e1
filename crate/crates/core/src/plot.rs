//! Standalone SVG renderings: heatmaps, bar charts and line charts.
//!
//! Output is plain text with fixed number formatting, so identical inputs
//! render byte-identical files.

use std::fmt::Write as _;

const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Maps `t` in [0, 1] onto a dark-blue → teal → yellow ramp.
pub fn color(t: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 3] = [(0.0, [68.0, 1.0, 84.0]), (0.5, [33.0, 145.0, 140.0]), (1.0, [253.0, 231.0, 37.0])];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let k = usize::from(t > 0.5);
    let (t0, c0) = STOPS[k];
    let (t1, c1) = STOPS[k + 1];
    let f = (t - t0) / (t1 - t0);
    let ch = |i: usize| (c0[i] + f * (c1[i] - c0[i])).round() as u8;
    format!("#{:02x}{:02x}{:02x}", ch(0), ch(1), ch(2))
}

fn open(out: &mut String, width: f64, height: f64, title: &str) {
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    )
    .unwrap();
    writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
    writeln!(
        out,
        "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>",
        width / 2.0,
        escape(title)
    )
    .unwrap();
}

/// Heatmap of row-major `values` in [0, 1] with row and column labels and a
/// vertical color scale on the right.
pub fn heatmap(title: &str, rows: &[String], cols: &[String], values: &[f64], x_label: &str, y_label: &str) -> String {
    assert_eq!(values.len(), rows.len() * cols.len(), "heatmap values must fill the grid");
    let cell = 48.0;
    let (left, top) = (90.0, 40.0);
    let grid_w = cell * cols.len() as f64;
    let grid_h = cell * rows.len() as f64;
    let width = left + grid_w + 90.0;
    let height = top + grid_h + 60.0;
    let mut out = String::new();
    open(&mut out, width, height, title);
    for (i, r) in rows.iter().enumerate() {
        let y = top + cell * i as f64;
        writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{}</text>",
            left - 6.0,
            y + cell / 2.0 + 4.0,
            escape(r)
        )
        .unwrap();
        for (j, _) in cols.iter().enumerate() {
            let v = values[i * cols.len() + j];
            let x = left + cell * j as f64;
            writeln!(
                out,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"{}\"><title>{}</title></rect>",
                color(v),
                format_args!("{v:.4}")
            )
            .unwrap();
            let ink = if v > 0.6 { "black" } else { "white" };
            writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"{ink}\" {FONT}>{v:.2}</text>",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            )
            .unwrap();
        }
    }
    for (j, c) in cols.iter().enumerate() {
        writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{}</text>",
            left + cell * j as f64 + cell / 2.0,
            top + grid_h + 16.0,
            escape(c)
        )
        .unwrap();
    }
    writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{}</text>",
        left + grid_w / 2.0,
        top + grid_h + 40.0,
        escape(x_label)
    )
    .unwrap();
    writeln!(
        out,
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\" {FONT}>{}</text>",
        top + grid_h / 2.0,
        top + grid_h / 2.0,
        escape(y_label)
    )
    .unwrap();

    // color scale, 1 at the top
    let (sx, steps) = (left + grid_w + 24.0, 20);
    let step_h = grid_h / steps as f64;
    for k in 0..steps {
        let t = 1.0 - (k as f64 + 0.5) / steps as f64;
        writeln!(
            out,
            "<rect x=\"{sx:.1}\" y=\"{:.1}\" width=\"14\" height=\"{:.1}\" fill=\"{}\"/>",
            top + step_h * k as f64,
            step_h + 0.5,
            color(t)
        )
        .unwrap();
    }
    for (t, y) in [(1.0, top), (0.5, top + grid_h / 2.0), (0.0, top + grid_h)] {
        writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" {FONT}>{t:.1}</text>", sx + 20.0, y + 4.0).unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bars with value labels, optionally with a dashed horizontal
/// reference line.
pub fn bar_chart(title: &str, labels: &[String], values: &[f64], reference: Option<f64>, y_label: &str) -> String {
    assert_eq!(labels.len(), values.len(), "one value per bar");
    let (left, top, plot_h, bar_w, gap) = (70.0, 40.0, 220.0, 56.0, 24.0);
    let plot_w = (bar_w + gap) * labels.len().max(1) as f64 + gap;
    let width = left + plot_w + 20.0;
    let height = top + plot_h + 60.0;
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let max = finite.chain(reference).fold(0.0f64, f64::max);
    let max = if max > 0.0 { max * 1.15 } else { 1.0 };
    let y_of = |v: f64| top + plot_h - plot_h * (v / max);
    let mut out = String::new();
    open(&mut out, width, height, title);
    writeln!(
        out,
        "<line x1=\"{left:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        top + plot_h,
        left + plot_w,
        top + plot_h
    )
    .unwrap();
    writeln!(out, "<line x1=\"{left:.1}\" y1=\"{top:.1}\" x2=\"{left:.1}\" y2=\"{:.1}\" stroke=\"black\"/>", top + plot_h).unwrap();
    for k in 0..=4 {
        let v = max * k as f64 / 4.0;
        writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{v:.3}</text>",
            left - 4.0,
            y_of(v) + 4.0
        )
        .unwrap();
    }
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let x = left + gap + (bar_w + gap) * i as f64;
        if v.is_finite() {
            let y = y_of(v.max(0.0));
            writeln!(
                out,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
                top + plot_h - y,
                color(0.35)
            )
            .unwrap();
            writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{v:.3}</text>",
                x + bar_w / 2.0,
                y - 4.0
            )
            .unwrap();
        } else {
            writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>n/a</text>",
                x + bar_w / 2.0,
                top + plot_h - 4.0
            )
            .unwrap();
        }
        writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{}</text>",
            x + bar_w / 2.0,
            top + plot_h + 16.0,
            escape(label)
        )
        .unwrap();
    }
    if let Some(r) = reference {
        writeln!(
            out,
            "<line x1=\"{left:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"crimson\" stroke-dasharray=\"5,4\"/>",
            y_of(r),
            left + plot_w,
            y_of(r)
        )
        .unwrap();
    }
    writeln!(
        out,
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\" {FONT}>{}</text>",
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        escape(y_label)
    )
    .unwrap();
    out.push_str("</svg>\n");
    out
}

/// Polylines on the unit square (ROC style), each series named in a legend,
/// with an optional dashed diagonal.
pub fn line_chart(title: &str, series: &[(String, Vec<(f64, f64)>)], x_label: &str, y_label: &str, diagonal: bool) -> String {
    const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let (left, top, side) = (60.0, 40.0, 260.0);
    let width = left + side + 170.0;
    let height = top + side + 50.0;
    let px = |x: f64| left + side * x.clamp(0.0, 1.0);
    let py = |y: f64| top + side - side * y.clamp(0.0, 1.0);
    let mut out = String::new();
    open(&mut out, width, height, title);
    writeln!(out, "<rect x=\"{left:.1}\" y=\"{top:.1}\" width=\"{side:.1}\" height=\"{side:.1}\" fill=\"none\" stroke=\"black\"/>").unwrap();
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{t:.2}</text>", px(t), top + side + 14.0).unwrap();
        writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{t:.2}</text>", left - 4.0, py(t) + 4.0).unwrap();
    }
    if diagonal {
        writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"gray\" stroke-dasharray=\"4,4\"/>",
            px(0.0),
            py(0.0),
            px(1.0),
            py(1.0)
        )
        .unwrap();
    }
    for (k, (name, points)) in series.iter().enumerate() {
        let stroke = PALETTE[k % PALETTE.len()];
        let mut path = String::new();
        for (i, &(x, y)) in points.iter().enumerate() {
            if i > 0 {
                path.push(' ');
            }
            write!(path, "{:.2},{:.2}", px(x), py(y)).unwrap();
        }
        writeln!(out, "<polyline points=\"{path}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"1.5\"/>").unwrap();
        let ly = top + 14.0 + 16.0 * k as f64;
        let lx = left + side + 14.0;
        writeln!(out, "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{stroke}\" stroke-width=\"2\"/>", lx + 18.0).unwrap();
        writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" {FONT}>{}</text>", lx + 24.0, ly + 4.0, escape(name)).unwrap();
    }
    writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{}</text>", left + side / 2.0, top + side + 34.0, escape(x_label)).unwrap();
    writeln!(
        out,
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\" {FONT}>{}</text>",
        top + side / 2.0,
        top + side / 2.0,
        escape(y_label)
    )
    .unwrap();
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(color(0.0), "#440154");
        assert_eq!(color(1.0), "#fde725");
        assert_eq!(color(f64::NAN), color(0.0));
    }

    #[test]
    fn single_cell_heatmap_renders() {
        let svg = heatmap("t", &["a".into()], &["b".into()], &[0.5], "x", "y");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains(">0.50</text>"));
    }

    #[test]
    fn labels_are_escaped() {
        let svg = bar_chart("a<b", &["x&y".into()], &[f64::INFINITY], Some(1.0), "v");
        assert!(svg.contains("a&lt;b") && svg.contains("x&amp;y") && svg.contains("n/a"));
    }
}
