//! Scatter plots with a least-squares line, its 95% band and a correlation
//! annotation, emitted as standalone SVG text.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::stats::{linear_fit, pearson, CorrelationResult, LinearFit};
use crate::verify::ExperimentReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const BAND_SAMPLES: usize = 48;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x_title: String,
    pub y_title: String,
    pub points: Vec<PlotPoint>,
    pub fit: Option<LinearFit>,
    pub correlation: Option<CorrelationResult>,
}

impl PlotSpec {
    /// Adds a fit and correlation whenever the points support them.
    pub fn scatter(title: &str, x_title: &str, y_title: &str, points: Vec<PlotPoint>) -> Self {
        let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
        Self {
            title: title.to_string(),
            x_title: x_title.to_string(),
            y_title: y_title.to_string(),
            fit: linear_fit(&xs, &ys).ok(),
            correlation: pearson(&xs, &ys).ok(),
            points,
        }
    }

    /// CE of each target against its held-out error.
    pub fn ce_vs_error(report: &ExperimentReport) -> Self {
        let points = report
            .rows
            .iter()
            .map(|r| PlotPoint { x: r.ce_nats, y: r.test_error, label: r.target.clone() })
            .collect();
        Self::scatter("CE vs. test error on target tasks", "H(Y|Z) [nats]", "test error", points)
    }

    /// Hardness of each target against its held-out error.
    pub fn hardness_vs_error(report: &ExperimentReport) -> Self {
        let points = report
            .rows
            .iter()
            .map(|r| PlotPoint { x: r.hardness_nats, y: r.test_error, label: r.target.clone() })
            .collect();
        Self::scatter("Hardness vs. test error", "H(Y) [nats]", "test error", points)
    }

    pub fn annotation(&self) -> Option<String> {
        self.correlation.map(|c| format!("Corr = {:.3}, p = {}", c.r, format_p(c.p)))
    }
}

fn format_p(p: f64) -> String {
    if p < 0.001 {
        "< 0.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

struct Frame {
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let (lo, hi) = self.x_range;
        MARGIN_LEFT + (x - lo) / (hi - lo) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let (lo, hi) = self.y_range;
        HEIGHT - MARGIN_BOTTOM - (y - lo) / (hi - lo) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

/// Renders the plot. Identical specs give identical bytes.
pub fn emit_svg(spec: &PlotSpec) -> Result<String> {
    if spec.points.is_empty() {
        return Err(Error::EmptyPlot);
    }
    if spec.points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::InvalidConfig("plot coordinates must be finite".into()));
    }
    let x_range = padded_range(spec.points.iter().map(|p| p.x));
    let (x_lo, x_hi) = x_range;
    let xs: Vec<f64> = (0..=BAND_SAMPLES).map(|i| x_lo + (x_hi - x_lo) * i as f64 / BAND_SAMPLES as f64).collect();

    let band: Option<Vec<(f64, f64, f64)>> = spec
        .fit
        .map(|fit| xs.iter().map(|&x| (x, fit.predict(x) - fit.ci95_half_width(x), fit.predict(x) + fit.ci95_half_width(x))).collect());
    let mut y_values: Vec<f64> = spec.points.iter().map(|p| p.y).collect();
    if let Some(band) = &band {
        y_values.extend(band.iter().flat_map(|&(_, lo, hi)| [lo, hi]));
    }
    let frame = Frame { x_range, y_range: padded_range(y_values.into_iter()) };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(&spec.title)
    );

    // axes with five ticks each
    let (bottom, left) = (HEIGHT - MARGIN_BOTTOM, MARGIN_LEFT);
    let _ = writeln!(
        svg,
        r#"<path d="M{left:.2},{MARGIN_TOP:.2} L{left:.2},{bottom:.2} L{:.2},{bottom:.2}" fill="none" stroke="black"/>"#,
        WIDTH - MARGIN_RIGHT
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x_lo + t * (x_hi - x_lo);
        let yv = frame.y_range.0 + t * (frame.y_range.1 - frame.y_range.0);
        let (px, py) = (frame.px(xv), frame.py(yv));
        let _ = writeln!(svg, r#"<line x1="{px:.2}" y1="{bottom:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, bottom + 5.0);
        let _ = writeln!(svg, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{xv:.3}</text>"#, bottom + 18.0);
        let _ = writeln!(svg, r#"<line x1="{:.2}" y1="{py:.2}" x2="{left:.2}" y2="{py:.2}" stroke="black"/>"#, left - 5.0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.3}</text>"#, left - 8.0, py + 4.0);
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        frame.px((x_lo + x_hi) / 2.0),
        HEIGHT - 15.0,
        escape(&spec.x_title)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{0:.2}" text-anchor="middle" transform="rotate(-90 18 {0:.2})">{1}</text>"#,
        (MARGIN_TOP + bottom) / 2.0,
        escape(&spec.y_title)
    );

    if let (Some(fit), Some(band)) = (spec.fit, band) {
        let mut d = String::new();
        for (i, &(x, _, hi)) in band.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, frame.px(x), frame.py(hi));
        }
        for &(x, lo, _) in band.iter().rev() {
            let _ = write!(d, "L{:.2},{:.2} ", frame.px(x), frame.py(lo));
        }
        d.push('Z');
        let _ = writeln!(svg, r##"<path class="band" d="{d}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>"##);
        let _ = writeln!(
            svg,
            r##"<line class="fit" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#08519c" stroke-width="2"/>"##,
            frame.px(x_lo),
            frame.py(fit.predict(x_lo)),
            frame.px(x_hi),
            frame.py(fit.predict(x_hi))
        );
    }

    for p in &spec.points {
        let _ = writeln!(
            svg,
            r##"<circle class="point" cx="{:.2}" cy="{:.2}" r="4" fill="#d62728"><title>{}</title></circle>"##,
            frame.px(p.x),
            frame.py(p.y),
            escape(&p.label)
        );
    }

    if let Some(text) = spec.annotation() {
        let _ = writeln!(
            svg,
            r#"<rect class="annotation" x="{:.2}" y="{:.2}" width="190" height="24" fill="white" stroke="black"/>"#,
            left + 10.0,
            MARGIN_TOP + 6.0
        );
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, left + 18.0, MARGIN_TOP + 22.0, escape(&text));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
