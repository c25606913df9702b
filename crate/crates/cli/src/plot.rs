//! Hand-rolled SVG figures: learning curves with seed bands, PCA cluster
//! scatters, per-skill length boxes, and histograms. Figures are pure
//! functions of logs + config, so regenerating one is bit-identical.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 48.0;

pub const PALETTE: [&str; 8] = [
    "#d34a4a", "#3f7bd1", "#43a047", "#c7a52a", "#8e44ad", "#e67e22", "#16a085", "#7f8c8d",
];

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(1e-12);
        MARGIN_L + (v - self.x_min) / span * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(1e-12);
        HEIGHT - MARGIN_B - (v - self.y_min) / span * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

fn open_svg(out: &mut String, title: &str, config_hash: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(out, "<!-- config_hash={config_hash} -->");
    let _ = writeln!(
        out,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let x0 = frame.x(frame.x_min);
    let x1 = frame.x(frame.x_max);
    let y0 = frame.y(frame.y_min);
    let y1 = frame.y(frame.y_max);
    let _ = writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>",
        fmt(x0),
        fmt(y0),
        fmt(x1),
        fmt(y0)
    );
    let _ = writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>",
        fmt(x0),
        fmt(y0),
        fmt(x0),
        fmt(y1)
    );
    for i in 0..=4 {
        let tx = frame.x_min + (frame.x_max - frame.x_min) * i as f64 / 4.0;
        let ty = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" \
             text-anchor=\"middle\">{}</text>",
            fmt(frame.x(tx)),
            fmt(y0 + 14.0),
            format_tick(tx)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" \
             text-anchor=\"end\">{}</text>",
            fmt(x0 - 6.0),
            fmt(frame.y(ty) + 3.0),
            format_tick(ty)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">{}</text>",
        fmt((x0 + x1) / 2.0),
        fmt(HEIGHT - 10.0),
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        fmt((y0 + y1) / 2.0),
        fmt((y0 + y1) / 2.0),
        escape(y_label)
    );
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{:.0}k", v / 1000.0)
    } else if (v - v.round()).abs() < 1e-9 {
        format!("{:.0}", v)
    } else {
        format!("{v:.2}")
    }
}

/// One method's evaluation curves across seeds: `(env_steps, eval_return)`.
pub struct MethodCurve {
    pub method: String,
    pub seeds: Vec<Vec<(f64, f64)>>,
}

/// Mean curve with a ±1 std band per method, seeds resampled onto the union
/// grid by last-observation carry-forward.
pub fn learning_curve_svg(curves: &[MethodCurve], title: &str, config_hash: &str) -> String {
    let mut xs: Vec<f64> = curves
        .iter()
        .flat_map(|c| c.seeds.iter().flatten().map(|p| p.0))
        .collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    let mut y_max = 1.0f64;
    let mut y_min = 0.0f64;
    for c in curves {
        for s in &c.seeds {
            for &(_, y) in s {
                y_max = y_max.max(y);
                y_min = y_min.min(y);
            }
        }
    }
    let frame = Frame {
        x_min: xs.first().copied().unwrap_or(0.0),
        x_max: xs.last().copied().unwrap_or(1.0),
        y_min,
        y_max: y_max * 1.05,
    };
    let mut out = String::new();
    open_svg(&mut out, title, config_hash);
    axes(&mut out, &frame, "low-level env steps", "return");
    for (ci, c) in curves.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        // Resample every seed onto the union grid.
        let resampled: Vec<Vec<f64>> = c
            .seeds
            .iter()
            .map(|seed| {
                let mut vals = Vec::with_capacity(xs.len());
                let mut last = seed.first().map(|p| p.1).unwrap_or(0.0);
                let mut idx = 0;
                for &x in &xs {
                    while idx < seed.len() && seed[idx].0 <= x {
                        last = seed[idx].1;
                        idx += 1;
                    }
                    vals.push(last);
                }
                vals
            })
            .collect();
        let n = resampled.len().max(1) as f64;
        let mean: Vec<f64> = (0..xs.len())
            .map(|i| resampled.iter().map(|s| s[i]).sum::<f64>() / n)
            .collect();
        let std: Vec<f64> = (0..xs.len())
            .map(|i| {
                let m = mean[i];
                (resampled.iter().map(|s| (s[i] - m) * (s[i] - m)).sum::<f64>() / n).sqrt()
            })
            .collect();
        // Band polygon: upper path then reversed lower path.
        let mut band = String::new();
        for (i, &x) in xs.iter().enumerate() {
            let _ = write!(band, "{},{} ", fmt(frame.x(x)), fmt(frame.y(mean[i] + std[i])));
        }
        for (i, &x) in xs.iter().enumerate().rev() {
            let _ = write!(band, "{},{} ", fmt(frame.x(x)), fmt(frame.y(mean[i] - std[i])));
        }
        let _ = writeln!(
            out,
            "<polygon points=\"{}\" fill=\"{}\" opacity=\"0.15\"/>",
            band.trim(),
            color
        );
        let mut line = String::new();
        for (i, &x) in xs.iter().enumerate() {
            let _ = write!(line, "{},{} ", fmt(frame.x(x)), fmt(frame.y(mean[i])));
        }
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>",
            line.trim(),
            color
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{}\">{}</text>",
            fmt(WIDTH - MARGIN_R - 110.0),
            fmt(MARGIN_T + 16.0 * ci as f64),
            color,
            escape(&c.method)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter of 2-D projected points colored by label; axes carry explained
/// variance percentages.
pub fn pca_scatter_svg(
    points: &[(f64, f64)],
    labels: &[i32],
    explained: &[f64],
    title: &str,
    config_hash: &str,
) -> String {
    let (mut x_min, mut x_max, mut y_min, mut y_max) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in points {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    let frame = Frame {
        x_min,
        x_max,
        y_min,
        y_max,
    };
    let mut out = String::new();
    open_svg(&mut out, title, config_hash);
    let pc1 = explained.first().copied().unwrap_or(0.0) * 100.0;
    let pc2 = explained.get(1).copied().unwrap_or(0.0) * 100.0;
    axes(
        &mut out,
        &frame,
        &format!("PC1 ({pc1:.1}% var)"),
        &format!("PC2 ({pc2:.1}% var)"),
    );
    for (&(x, y), &label) in points.iter().zip(labels.iter()) {
        let color = PALETTE[(label.max(0) as usize) % PALETTE.len()];
        let _ = writeln!(
            out,
            "<circle cx=\"{}\" cy=\"{}\" r=\"1.6\" fill=\"{}\" opacity=\"0.7\"/>",
            fmt(frame.x(x)),
            fmt(frame.y(y)),
            color
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Quartile boxes of segment lengths per skill label.
pub fn skill_length_boxes_svg(
    stats: &extract_core::segment::ClusterStatistics,
    title: &str,
    config_hash: &str,
) -> String {
    let k = stats.per_label.len();
    let y_max = stats
        .per_label
        .iter()
        .map(|s| s.max_len)
        .max()
        .unwrap_or(1) as f64;
    let frame = Frame {
        x_min: -0.5,
        x_max: k as f64 - 0.5,
        y_min: 0.0,
        y_max: y_max * 1.1,
    };
    let mut out = String::new();
    open_svg(&mut out, title, config_hash);
    axes(&mut out, &frame, "skill id", "segment length");
    let half = 0.28;
    for (i, s) in stats.per_label.iter().enumerate() {
        if s.count == 0 {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        let x = i as f64;
        let (x0, x1) = (frame.x(x - half), frame.x(x + half));
        let (yq1, yq3) = (frame.y(s.q1_len), frame.y(s.q3_len));
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\"/>",
            fmt(frame.x(x)),
            fmt(frame.y(s.min_len as f64)),
            fmt(frame.x(x)),
            fmt(frame.y(s.max_len as f64)),
            color
        );
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" opacity=\"0.5\"/>",
            fmt(x0),
            fmt(yq3),
            fmt(x1 - x0),
            fmt(yq1 - yq3),
            color
        );
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#222\"/>",
            fmt(x0),
            fmt(frame.y(s.median_len)),
            fmt(x1),
            fmt(frame.y(s.median_len))
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Histogram over integer values in `[0, upper]`.
pub fn histogram_svg(
    counts: &[usize],
    title: &str,
    x_label: &str,
    config_hash: &str,
) -> String {
    let max_count = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let frame = Frame {
        x_min: 0.0,
        x_max: counts.len() as f64,
        y_min: 0.0,
        y_max: max_count * 1.05,
    };
    let mut out = String::new();
    open_svg(&mut out, title, config_hash);
    axes(&mut out, &frame, x_label, "count");
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let x0 = frame.x(i as f64) + 0.5;
        let x1 = frame.x(i as f64 + 1.0) - 0.5;
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#3f7bd1\" opacity=\"0.8\"/>",
            fmt(x0),
            fmt(frame.y(c as f64)),
            fmt((x1 - x0).max(0.5)),
            fmt(frame.y(0.0) - frame.y(c as f64))
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Bar chart with error bars (ablation summaries).
pub fn bar_chart_svg(
    bars: &[(String, f64, f64)],
    title: &str,
    x_label: &str,
    y_label: &str,
    config_hash: &str,
) -> String {
    let y_max = bars
        .iter()
        .map(|&(_, m, s)| m + s)
        .fold(1.0f64, f64::max);
    let frame = Frame {
        x_min: -0.5,
        x_max: bars.len() as f64 - 0.5,
        y_min: 0.0,
        y_max: y_max * 1.1,
    };
    let mut out = String::new();
    open_svg(&mut out, title, config_hash);
    axes(&mut out, &frame, x_label, y_label);
    for (i, (label, mean, std)) in bars.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let x = i as f64;
        let (x0, x1) = (frame.x(x - 0.3), frame.x(x + 0.3));
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" opacity=\"0.7\"/>",
            fmt(x0),
            fmt(frame.y(*mean)),
            fmt(x1 - x0),
            fmt(frame.y(0.0) - frame.y(*mean)),
            color
        );
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#222\"/>",
            fmt(frame.x(x)),
            fmt(frame.y(mean - std)),
            fmt(frame.x(x)),
            fmt(frame.y(mean + std))
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{}</text>",
            fmt(frame.x(x)),
            fmt(frame.y(0.0) + 26.0),
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}
