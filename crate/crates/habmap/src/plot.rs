//! SVG rendering of evaluation artifacts: precision–recall and ROC
//! curve charts and confusion-matrix heatmaps. Pure string generation —
//! the outputs open in any browser or embed in reports.

use crate::metrics::{curve_grid, CurvePoint};

const CHART_WIDTH: f64 = 640.0;
const CHART_HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const LEGEND_WIDTH: f64 = 160.0;

/// Line colors cycled across series.
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// One named line of a chart; coordinates live in the unit square.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points }
    }

    /// A swept threshold curve (x, y as stored by the metrics module).
    pub fn from_curve(label: impl Into<String>, curve: &[CurvePoint]) -> Self {
        Self::new(label, curve.iter().map(|p| (p.x, p.y)).collect())
    }

    /// A 101-point averaged curve on the shared grid.
    pub fn from_grid(label: impl Into<String>, values: &[f64]) -> Self {
        Self::new(label, curve_grid().into_iter().zip(values.iter().copied()).collect())
    }
}

pub fn escape_xml(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(ch),
        }
    }
    out
}

fn plot_area() -> (f64, f64, f64, f64) {
    let width = CHART_WIDTH - MARGIN_LEFT - LEGEND_WIDTH;
    let height = CHART_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    (MARGIN_LEFT, MARGIN_TOP, width, height)
}

fn to_pixel(u: f64, v: f64) -> (f64, f64) {
    let (x0, y0, w, h) = plot_area();
    let u = u.clamp(0.0, 1.0);
    let v = v.clamp(0.0, 1.0);
    (x0 + u * w, y0 + (1.0 - v) * h)
}

/// Shared chart skeleton over the unit square: frame, quarter gridlines,
/// tick labels, axis titles, series polylines (optionally rendered as
/// step functions), and a legend.
fn chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    step: bool,
    diagonal: bool,
) -> String {
    let (x0, y0, w, h) = plot_area();
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CHART_WIDTH}\" \
         height=\"{CHART_HEIGHT}\" viewBox=\"0 0 {CHART_WIDTH} {CHART_HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        x0 + w / 2.0,
        y0 - 16.0,
        escape_xml(title)
    ));

    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (gx, _) = to_pixel(t, 0.0);
        let (_, gy) = to_pixel(0.0, t);
        svg.push_str(&format!(
            "<line x1=\"{gx:.1}\" y1=\"{y0:.1}\" x2=\"{gx:.1}\" y2=\"{:.1}\" \
             stroke=\"#dddddd\"/>\n",
            y0 + h
        ));
        svg.push_str(&format!(
            "<line x1=\"{x0:.1}\" y1=\"{gy:.1}\" x2=\"{:.1}\" y2=\"{gy:.1}\" \
             stroke=\"#dddddd\"/>\n",
            x0 + w
        ));
        svg.push_str(&format!(
            "<text x=\"{gx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{t:.2}</text>\n",
            y0 + h + 18.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{t:.2}</text>\n",
            x0 - 8.0,
            gy + 4.0
        ));
    }
    svg.push_str(&format!(
        "<rect x=\"{x0:.1}\" y=\"{y0:.1}\" width=\"{w:.1}\" height=\"{h:.1}\" \
         fill=\"none\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        x0 + w / 2.0,
        y0 + h + 38.0,
        escape_xml(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" \
         transform=\"rotate(-90 {:.1} {:.1})\">{}</text>\n",
        x0 - 45.0,
        y0 + h / 2.0,
        x0 - 45.0,
        y0 + h / 2.0,
        escape_xml(y_label)
    ));

    if diagonal {
        let (ax, ay) = to_pixel(0.0, 0.0);
        let (bx, by) = to_pixel(1.0, 1.0);
        svg.push_str(&format!(
            "<line x1=\"{ax:.1}\" y1=\"{ay:.1}\" x2=\"{bx:.1}\" y2=\"{by:.1}\" \
             stroke=\"#999999\" stroke-dasharray=\"5 4\"/>\n"
        ));
    }

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut coords = Vec::new();
        let mut prev: Option<(f64, f64)> = None;
        for &(u, v) in &s.points {
            if step {
                if let Some((pu, _)) = prev {
                    // step rule: rise vertically at the previous x, then
                    // run horizontally at the new height
                    let (sx, sy) = to_pixel(pu, v);
                    coords.push(format!("{sx:.1},{sy:.1}"));
                }
            }
            let (px, py) = to_pixel(u, v);
            coords.push(format!("{px:.1},{py:.1}"));
            prev = Some((u, v));
        }
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            coords.join(" ")
        ));
        let ly = y0 + 14.0 + 18.0 * i as f64;
        let lx = x0 + w + 14.0;
        svg.push_str(&format!(
            "<line x1=\"{lx:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" \
             stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            ly - 4.0,
            lx + 22.0,
            ly - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{ly:.1}\">{}</text>\n",
            lx + 28.0,
            escape_xml(&s.label)
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

/// Precision–recall chart; curves are drawn with the same step
/// interpolation the average-precision rule integrates.
pub fn pr_svg(series: &[Series]) -> String {
    chart("Precision-recall", "recall", "precision", series, true, false)
}

/// ROC chart with the chance diagonal; curves are drawn with straight
/// segments, matching the trapezoidal AUC rule.
pub fn roc_svg(series: &[Series]) -> String {
    chart(
        "ROC",
        "false positive rate",
        "true positive rate",
        series,
        false,
        true,
    )
}

fn heat_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + t * (b - a)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 33.0), lerp(255.0, 102.0), lerp(255.0, 172.0))
}

/// Confusion-matrix heatmap. Rows are true classes, columns predictions.
/// `normalized` renders row-normalized fractions (two decimals), raw mode
/// renders integer counts; cell shading always follows the row-normalized
/// value so imbalanced classes stay readable.
pub fn confusion_svg(counts: &[Vec<u64>], codes: &[String], normalized: bool) -> String {
    let k = counts.len();
    assert!(k > 0 && codes.len() == k, "matrix and code list must agree");
    assert!(counts.iter().all(|row| row.len() == k), "matrix must be square");

    let cell: f64 = (560.0 / k as f64).clamp(26.0, 64.0);
    let label_space = 70.0;
    let title_space = 30.0;
    let width = label_space + cell * k as f64 + 20.0;
    let height = title_space + label_space + cell * k as f64 + 20.0;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">Confusion matrix \
         (rows: true, columns: predicted)</text>\n",
        width / 2.0
    ));

    let x0 = label_space;
    let y0 = title_space + label_space;
    for (ci, code) in codes.iter().enumerate() {
        let cx = x0 + cell * (ci as f64 + 0.5);
        svg.push_str(&format!(
            "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"start\" \
             transform=\"rotate(-60 {cx:.1} {:.1})\">{}</text>\n",
            y0 - 6.0,
            y0 - 6.0,
            escape_xml(code)
        ));
        let cy = y0 + cell * (ci as f64 + 0.5) + 4.0;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{cy:.1}\" text-anchor=\"end\">{}</text>\n",
            x0 - 6.0,
            escape_xml(code)
        ));
    }

    for (ri, row) in counts.iter().enumerate() {
        let support: u64 = row.iter().sum();
        for (ci, &count) in row.iter().enumerate() {
            let fraction = if support == 0 { 0.0 } else { count as f64 / support as f64 };
            let x = x0 + cell * ci as f64;
            let y = y0 + cell * ri as f64;
            svg.push_str(&format!(
                "<rect class=\"cell\" x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell:.1}\" \
                 height=\"{cell:.1}\" fill=\"{}\" stroke=\"#cccccc\"/>\n",
                heat_color(fraction)
            ));
            let text = if normalized { format!("{fraction:.2}") } else { count.to_string() };
            let text_color = if fraction > 0.6 { "white" } else { "black" };
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"{text_color}\">{text}\
                 </text>\n",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            ));
        }
    }

    svg.push_str("</svg>\n");
    svg
}
