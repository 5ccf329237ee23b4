//! Hand-rolled SVG line charts. No external renderer: the output is a
//! single self-contained `<svg>` document with fixed-precision
//! coordinates, so identical inputs produce identical bytes.

use std::fmt::Write as _;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 18.0;
const MARGIN_TOP: f64 = 42.0;
const MARGIN_BOTTOM: f64 = 52.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
const TICKS: usize = 5;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Nice printing for tick labels: strip trailing zeros of a fixed
/// 3-decimal rendering so 0.500 prints as 0.5 and 80 as 80.
fn tick_label(value: f64) -> String {
    let mut text = format!("{value:.3}");
    while text.contains('.') && (text.ends_with('0') || text.ends_with('.')) {
        text.pop();
    }
    text
}

fn range_of(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        // Degenerate span: pad symmetrically so the line is visible.
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

/// Render a line chart. `y_range` pins the vertical axis (accuracies
/// read best on a fixed 0..1); `None` fits the data with 5% headroom.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    y_range: Option<(f64, f64)>,
) -> String {
    let (x_lo, x_hi) = range_of(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y_lo, y_hi) = y_range.unwrap_or_else(|| {
        let (lo, hi) = range_of(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    });
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let map_x = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let map_y = |y: f64| MARGIN_TOP + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">"
    );
    let _ = writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    );

    // Gridlines and tick labels.
    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let x = x_lo + f * (x_hi - x_lo);
        let y = y_lo + f * (y_hi - y_lo);
        let px = map_x(x);
        let py = map_y(y);
        let _ = writeln!(
            svg,
            "<line x1=\"{px:.2}\" y1=\"{:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>",
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{:.2}\" y2=\"{py:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        );
        let _ = writeln!(
            svg,
            "<text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"11\">{}</text>",
            MARGIN_TOP + plot_h + 16.0,
            tick_label(x)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"11\">{}</text>",
            MARGIN_LEFT - 6.0,
            py + 4.0,
            tick_label(y)
        );
    }

    // Axes on top of the grid.
    let _ = writeln!(
        svg,
        "<rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{plot_w:.2}\" \
         height=\"{plot_h:.2}\" fill=\"none\" stroke=\"#444444\" stroke-width=\"1\"/>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\" \
         transform=\"rotate(-90 16 {:.2})\">{}</text>",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    );

    for (i, one) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut path = String::new();
        for (j, (x, y)) in one.points.iter().enumerate() {
            let cmd = if j == 0 { 'M' } else { 'L' };
            let _ = write!(path, "{cmd}{:.2} {:.2} ", map_x(*x), map_y(*y));
        }
        let _ = writeln!(
            svg,
            "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>",
            path.trim_end()
        );
        for (x, y) in &one.points {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.4\" fill=\"{color}\"/>",
                map_x(*x),
                map_y(*y)
            );
        }
        // Legend entry, top-left inside the plot area.
        let ly = MARGIN_TOP + 16.0 + i as f64 * 16.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" \
             stroke=\"{color}\" stroke-width=\"2.5\"/>",
            MARGIN_LEFT + 10.0,
            MARGIN_LEFT + 34.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{}</text>",
            MARGIN_LEFT + 40.0,
            ly + 4.0,
            escape(&one.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
