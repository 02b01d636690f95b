//! Standalone SVG line plots.
//!
//! Plots are written as self-contained XML with axes, tick labels, optional
//! log scales, and a legend; no plotting library is involved. The output is
//! a pure function of the inputs, so repeated renders of the same data are
//! byte-identical. Points that cannot be placed (non-finite coordinates, or
//! non-positive values on a log axis) are dropped, in order, without
//! touching the rest of the series.

use std::path::Path;

use crate::error::{Error, Result};

/// One named curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Series {
        Series {
            label: label.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotConfig {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub width: u32,
    pub height: u32,
}

impl Default for PlotConfig {
    fn default() -> PlotConfig {
        PlotConfig {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            log_x: false,
            log_y: false,
            width: 800,
            height: 500,
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
];

const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 44.0;
const MARGIN_BOTTOM: f64 = 56.0;

fn esc(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            other => out.push(other),
        }
    }
    out
}

/// Axis transform: identity or natural log.
fn transform(value: f64, log: bool) -> f64 {
    if log {
        value.ln()
    } else {
        value
    }
}

fn placeable(point: (f64, f64), log_x: bool, log_y: bool) -> bool {
    let (x, y) = point;
    x.is_finite() && y.is_finite() && (!log_x || x > 0.0) && (!log_y || y > 0.0)
}

/// Round tick step to the 1-2-5 ladder.
fn linear_ticks(min: f64, max: f64) -> Vec<f64> {
    let raw_step = (max - min) / 5.0;
    let magnitude = 10f64.powf(raw_step.log10().floor());
    let normalized = raw_step / magnitude;
    let step = if normalized <= 1.5 {
        1.0
    } else if normalized <= 3.5 {
        2.0
    } else if normalized <= 7.5 {
        5.0
    } else {
        10.0
    } * magnitude;
    let mut ticks = Vec::new();
    let mut tick = (min / step).ceil() * step;
    // Snap values like 0.30000000000000004 back onto the grid.
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    while tick <= max + step * 1e-9 {
        ticks.push(format!("{tick:.decimals$}").parse::<f64>().unwrap_or(tick));
        tick += step;
    }
    ticks
}

/// Powers of ten inside the range; 1-2-5 multiples when the span is shorter
/// than one decade.
fn log_ticks(min: f64, max: f64) -> Vec<f64> {
    let lo = min.log10().ceil() as i32;
    let hi = max.log10().floor() as i32;
    let decades: Vec<f64> = (lo..=hi).map(|k| 10f64.powi(k)).collect();
    if decades.len() >= 2 {
        return decades;
    }
    let mut ticks = Vec::new();
    for k in (min.log10().floor() as i32 - 1)..=(max.log10().ceil() as i32) {
        for mult in [1.0, 2.0, 5.0] {
            let value = mult * 10f64.powi(k);
            if value >= min * (1.0 - 1e-12) && value <= max * (1.0 + 1e-12) {
                ticks.push(value);
            }
        }
    }
    ticks
}

fn tick_label(value: f64) -> String {
    let abs = value.abs();
    if value == 0.0 || (1e-4..1e6).contains(&abs) {
        format!("{value}")
    } else {
        format!("{value:e}")
    }
}

/// Render `series` as a line plot; returns the SVG document.
///
/// Fails when no series is given or no point is placeable under the config's
/// axes.
pub fn line_plot(config: &PlotConfig, series: &[Series]) -> Result<String> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("plot needs at least one series".into()));
    }
    let drawable: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .copied()
                .filter(|&p| placeable(p, config.log_x, config.log_y))
                .collect()
        })
        .collect();

    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for points in &drawable {
        for &(x, y) in points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !x_min.is_finite() {
        return Err(Error::InvalidArgument(
            "no drawable point under the configured axes".into(),
        ));
    }
    // Widen degenerate ranges so a flat series still renders.
    if x_min == x_max {
        let pad = if config.log_x { x_min * 0.5 } else { x_min.abs().max(1.0) * 0.5 };
        x_min -= pad;
        x_max += pad;
        if config.log_x {
            x_min = x_min.max(x_max * 1e-3);
        }
    }
    if y_min == y_max {
        let pad = if config.log_y { y_min * 0.5 } else { y_min.abs().max(1.0) * 0.5 };
        y_min -= pad;
        y_max += pad;
        if config.log_y {
            y_min = y_min.max(y_max * 1e-3);
        }
    }

    let width = config.width as f64;
    let height = config.height as f64;
    let plot_w = width - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = height - MARGIN_TOP - MARGIN_BOTTOM;
    let (tx_min, tx_max) = (transform(x_min, config.log_x), transform(x_max, config.log_x));
    let (ty_min, ty_max) = (transform(y_min, config.log_y), transform(y_max, config.log_y));
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        let fx = (transform(x, config.log_x) - tx_min) / (tx_max - tx_min);
        let fy = (transform(y, config.log_y) - ty_min) / (ty_max - ty_min);
        (MARGIN_LEFT + fx * plot_w, MARGIN_TOP + (1.0 - fy) * plot_h)
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
         viewBox=\"0 0 {} {}\" font-family=\"sans-serif\">\n",
        config.width, config.height, config.width, config.height
    ));
    svg.push_str(&format!(
        "<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n",
        config.width, config.height
    ));
    if !config.title.is_empty() {
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
            MARGIN_LEFT + plot_w / 2.0,
            esc(&config.title)
        ));
    }

    // Grid and tick labels.
    let x_ticks = if config.log_x {
        log_ticks(x_min, x_max)
    } else {
        linear_ticks(x_min, x_max)
    };
    let y_ticks = if config.log_y {
        log_ticks(y_min, y_max)
    } else {
        linear_ticks(y_min, y_max)
    };
    for &tick in &x_ticks {
        let (px, _) = to_px(tick, y_min);
        svg.push_str(&format!(
            "<line x1=\"{px:.2}\" y1=\"{:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        ));
        svg.push_str(&format!(
            "<text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n",
            MARGIN_TOP + plot_h + 18.0,
            esc(&tick_label(tick))
        ));
    }
    for &tick in &y_ticks {
        let (_, py) = to_px(x_min, tick);
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{:.2}\" y2=\"{py:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"12\">{}</text>\n",
            MARGIN_LEFT - 8.0,
            py + 4.0,
            esc(&tick_label(tick))
        ));
    }

    // Axes on top of the grid.
    svg.push_str(&format!(
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{plot_w:.2}\" height=\"{plot_h:.2}\" \
         fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
        MARGIN_LEFT, MARGIN_TOP
    ));
    if !config.x_label.is_empty() {
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
            MARGIN_LEFT + plot_w / 2.0,
            height - 12.0,
            esc(&config.x_label)
        ));
    }
    if !config.y_label.is_empty() {
        let cy = MARGIN_TOP + plot_h / 2.0;
        svg.push_str(&format!(
            "<text x=\"18\" y=\"{cy:.2}\" text-anchor=\"middle\" font-size=\"13\" \
             transform=\"rotate(-90 18 {cy:.2})\">{}</text>\n",
            esc(&config.y_label)
        ));
    }

    // Curves: polyline when at least two points survive, markers always.
    for (index, points) in drawable.iter().enumerate() {
        let color = PALETTE[index % PALETTE.len()];
        if points.len() >= 2 {
            let coords: Vec<String> = points
                .iter()
                .map(|&(x, y)| {
                    let (px, py) = to_px(x, y);
                    format!("{px:.2},{py:.2}")
                })
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                coords.join(" ")
            ));
        }
        for &(x, y) in points {
            let (px, py) = to_px(x, y);
            svg.push_str(&format!(
                "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"{color}\"/>\n"
            ));
        }
    }

    // Legend, top-right inside the plot area.
    let legend_x = MARGIN_LEFT + plot_w - 150.0;
    let mut legend_y = MARGIN_TOP + 14.0;
    for (index, s) in series.iter().enumerate() {
        let color = PALETTE[index % PALETTE.len()];
        svg.push_str(&format!(
            "<line x1=\"{legend_x:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>\n",
            legend_y - 4.0,
            legend_x + 22.0,
            legend_y - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{legend_y:.2}\" font-size=\"12\">{}</text>\n",
            legend_x + 28.0,
            esc(&s.label)
        ));
        legend_y += 16.0;
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Render and write in one step.
pub fn save_plot(path: impl AsRef<Path>, config: &PlotConfig, series: &[Series]) -> Result<()> {
    let svg = line_plot(config, series)?;
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_series() -> Vec<Series> {
        vec![
            Series::new("first", vec![(1.0, 10.0), (2.0, 5.0), (4.0, 2.5)]),
            Series::new("second", vec![(1.0, 3.0), (2.0, 3.5), (4.0, 8.0)]),
        ]
    }

    /// Minimal well-formedness check: every opened tag closes in order, and
    /// every ampersand starts a known entity.
    fn assert_balanced_xml(svg: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = svg;
        while let Some(open) = rest.find('<') {
            let close = rest[open..].find('>').expect("unclosed tag bracket") + open;
            let tag = &rest[open + 1..close];
            if let Some(name) = tag.strip_prefix('/') {
                assert_eq!(stack.pop().as_deref(), Some(name), "mismatched close");
            } else if !tag.ends_with('/') {
                let name = tag.split_whitespace().next().unwrap();
                stack.push(name.to_string());
            }
            rest = &rest[close + 1..];
        }
        assert!(stack.is_empty(), "unclosed tags {stack:?}");
        for chunk in svg.split('&').skip(1) {
            assert!(
                ["amp;", "lt;", "gt;", "quot;"]
                    .iter()
                    .any(|e| chunk.starts_with(e)),
                "raw ampersand near {:.20}",
                chunk
            );
        }
    }

    #[test]
    fn curves_render_once_per_series_and_deterministically() {
        let config = PlotConfig {
            title: "demo".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            ..Default::default()
        };
        let series = sample_series();
        let svg = line_plot(&config, &series).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 6);
        assert_eq!(svg, line_plot(&config, &series).unwrap());
        assert_balanced_xml(&svg);
    }

    #[test]
    fn log_axes_use_decade_ticks_and_drop_bad_points() {
        let config = PlotConfig {
            log_x: true,
            log_y: true,
            ..Default::default()
        };
        let mut series = sample_series();
        series[0].points.push((8.0, -1.0));
        series[0].points.push((f64::NAN, 4.0));
        let svg = line_plot(&config, &series).unwrap();
        // The two bad points vanish; everything else still renders.
        assert_eq!(svg.matches("<circle").count(), 6);
        assert!(svg.contains(">10<"), "decade tick missing:\n{svg}");
        assert_balanced_xml(&svg);
    }

    #[test]
    fn labels_are_escaped() {
        let config = PlotConfig {
            title: "a < b & \"c\"".into(),
            ..Default::default()
        };
        let series = vec![Series::new("N < 5 & more", vec![(0.0, 1.0), (1.0, 2.0)])];
        let svg = line_plot(&config, &series).unwrap();
        assert!(svg.contains("a &lt; b &amp; &quot;c&quot;"));
        assert!(svg.contains("N &lt; 5 &amp; more"));
        assert!(!svg.contains("a < b"));
        assert_balanced_xml(&svg);
    }

    #[test]
    fn flat_and_empty_inputs_are_handled() {
        let config = PlotConfig::default();
        assert!(line_plot(&config, &[]).is_err());

        let flat = vec![Series::new("flat", vec![(1.0, 2.0), (3.0, 2.0)])];
        assert_balanced_xml(&line_plot(&config, &flat).unwrap());

        let log = PlotConfig {
            log_y: true,
            ..Default::default()
        };
        let negative = vec![Series::new("bad", vec![(1.0, -2.0)])];
        assert!(line_plot(&log, &negative).is_err());
    }

    #[test]
    fn saved_plot_reaches_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.svg");
        save_plot(&path, &PlotConfig::default(), &sample_series()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.trim_end().ends_with("</svg>"));
    }
}
