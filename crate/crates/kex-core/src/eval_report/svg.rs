//! Minimal hand-rolled SVG histogram rendering. Output bytes are a pure
//! function of the input, which keeps plot artifacts reproducible.

use super::TransformHistogram;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 56.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 48.0;

pub fn render_histogram(hist: &TransformHistogram, title: &str) -> String {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let max_count = hist.counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let n_bins = hist.counts.len().max(1) as f64;
    let x_min = *hist.bin_edges.first().unwrap_or(&0.0);
    let x_max = *hist.bin_edges.last().unwrap_or(&1.0);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-family=\"monospace\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(title)
    ));

    for (i, &count) in hist.counts.iter().enumerate() {
        let bar_w = plot_w / n_bins;
        let h = plot_h * count as f64 / max_count;
        let x = MARGIN_LEFT + i as f64 * bar_w;
        let y = MARGIN_TOP + (plot_h - h);
        svg.push_str(&format!(
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"#4878a8\" stroke=\"white\" stroke-width=\"0.5\"/>\n",
            bar_w
        ));
    }

    // axes
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        MARGIN_TOP + plot_h,
        WIDTH - MARGIN_RIGHT,
        MARGIN_TOP + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{MARGIN_TOP}\" x2=\"{MARGIN_LEFT}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        MARGIN_TOP + plot_h
    ));
    svg.push_str(&format!(
        "<text x=\"{MARGIN_LEFT}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">{x_min:.3}</text>\n",
        HEIGHT - 20.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">{x_max:.3}</text>\n",
        WIDTH - MARGIN_RIGHT,
        HEIGHT - 20.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">distance to normal centroid (mean {:.4})</text>\n",
        WIDTH / 2.0,
        HEIGHT - 6.0,
        hist.mean_distance
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\" transform=\"rotate(-90 18 {:.1})\" text-anchor=\"middle\">count (max {})</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        max_count as usize
    ));
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
