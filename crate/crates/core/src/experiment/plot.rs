//! Minimal SVG line chart: one color per agent, observed solid and
//! predicted dashed.

use std::fmt::Write;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn polyline(out: &mut String, row_major: &[Vec<f64>], agent: usize, map: &impl Fn(f64, f64) -> (f64, f64), color: &str, dashed: bool) {
    let points: Vec<String> = row_major
        .iter()
        .enumerate()
        .filter_map(|(k, row)| row.get(agent).map(|&v| map(k as f64, v)))
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect();
    let dash = if dashed { " stroke-dasharray=\"6 4\"" } else { "" };
    let _ = writeln!(
        out,
        "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash} points=\"{}\"/>",
        points.join(" ")
    );
}

/// `observed[k][q]` and `predicted[k][q]` are losses at step `k` for agent `q`.
pub fn loss_chart(title: &str, observed: &[Vec<f64>], predicted: &[Vec<f64>]) -> String {
    let all = observed.iter().chain(predicted).flatten().copied().filter(|v| v.is_finite());
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 * hi.abs().max(1.0) {
        let pad = 0.5 * hi.abs().max(1e-12);
        (lo, hi) = (lo - pad, hi + pad);
    }
    let steps = observed.len().max(predicted.len()).saturating_sub(1).max(1) as f64;
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let map = |k: f64, v: f64| (LEFT + pw * k / steps, TOP + ph * (1.0 - (v - lo) / (hi - lo)));

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(s, "  <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>", LEFT + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        "  <rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>"
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let v = lo + f * (hi - lo);
        let y = TOP + ph * (1.0 - f);
        let _ = writeln!(s, "  <text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{v:.4e}</text>", LEFT - 6.0, y + 4.0);
        let k = f * steps;
        let x = LEFT + pw * f;
        let _ = writeln!(s, "  <text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">{k:.0}</text>", TOP + ph + 18.0);
    }
    let _ = writeln!(s, "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">step</text>", LEFT + pw / 2.0, HEIGHT - 10.0);
    let _ = writeln!(
        s,
        "  <text transform=\"translate(16 {}) rotate(-90)\" text-anchor=\"middle\">loss</text>",
        TOP + ph / 2.0
    );

    let agents = observed.iter().chain(predicted).map(Vec::len).max().unwrap_or(0);
    for q in 0..agents {
        let color = PALETTE[q % PALETTE.len()];
        polyline(&mut s, observed, q, &map, color, false);
        polyline(&mut s, predicted, q, &map, color, true);
        let y = TOP + 10.0 + 16.0 * q as f64;
        let x = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            s,
            "  <line x1=\"{x}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            x + 20.0
        );
        let _ = writeln!(s, "  <text x=\"{}\" y=\"{}\">agent {q}</text>", x + 26.0, y + 4.0);
    }
    let y = TOP + 14.0 + 16.0 * agents as f64;
    let x = WIDTH - RIGHT + 12.0;
    let _ = writeln!(s, "  <text x=\"{x}\" y=\"{y}\">solid: observed</text>");
    let _ = writeln!(s, "  <text x=\"{x}\" y=\"{}\">dashed: predicted</text>", y + 16.0);
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
