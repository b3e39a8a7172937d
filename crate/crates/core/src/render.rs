//! Deterministic SVG figures: choropleth maps and the direct-versus-smoothed
//! comparison panels.
//!
//! Maps use a plate carrée projection with the longitude axis scaled by the
//! cosine of the mean latitude. All coordinates are printed with two
//! decimals and legend values with three significant figures, so output is
//! byte-identical for identical inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::bym::output::PosteriorRow;
use crate::bym::summary::quantile_sorted;
use crate::data::RegionBoundary;
use crate::direct::{Degeneracy, DirectEstimate};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("value supplied for unknown region `{0}`")]
    UnknownRegion(String),
    #[error("invalid choropleth spec: {0}")]
    Spec(String),
    #[error("no finite values to classify")]
    NoValues,
    #[error("region `{0}` is missing from one of the compared tables")]
    RegionMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreakStrategy {
    Quantile,
    EqualInterval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleScope {
    Global,
    /// One zoomed panel per country group, each with its own classes.
    PerGroup,
}

/// Anchor colours of the default sequential ramp.
const RAMP_ANCHORS: [[u8; 3]; 5] = [
    [0xfe, 0xf0, 0xd9],
    [0xfd, 0xcc, 0x8a],
    [0xfc, 0x8d, 0x59],
    [0xe3, 0x4a, 0x33],
    [0xb3, 0x00, 0x00],
];

/// `bins` colours interpolated along the default orange-red ramp.
pub fn default_ramp(bins: usize) -> Vec<String> {
    (0..bins)
        .map(|k| {
            let t = if bins == 1 { 0.0 } else { k as f64 / (bins - 1) as f64 };
            let pos = t * (RAMP_ANCHORS.len() - 1) as f64;
            let lo = (pos.floor() as usize).min(RAMP_ANCHORS.len() - 2);
            let f = pos - lo as f64;
            let c: Vec<u8> = (0..3)
                .map(|ch| {
                    let a = f64::from(RAMP_ANCHORS[lo][ch]);
                    let b = f64::from(RAMP_ANCHORS[lo + 1][ch]);
                    (a + f * (b - a)).round() as u8
                })
                .collect();
            format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoroplethSpec {
    pub value_label: String,
    pub breaks: BreakStrategy,
    pub bins: usize,
    pub scope: ScaleScope,
    pub ramp: Vec<String>,
}

impl ChoroplethSpec {
    /// Quantile breaks, global scope, default ramp.
    pub fn new(value_label: impl Into<String>, bins: usize) -> Self {
        ChoroplethSpec {
            value_label: value_label.into(),
            breaks: BreakStrategy::Quantile,
            bins,
            scope: ScaleScope::Global,
            ramp: default_ramp(bins),
        }
    }

    pub fn with_breaks(mut self, breaks: BreakStrategy) -> Self {
        self.breaks = breaks;
        self
    }

    pub fn with_scope(mut self, scope: ScaleScope) -> Self {
        self.scope = scope;
        self
    }

    fn validate(&self) -> Result<(), RenderError> {
        if self.bins < 2 {
            return Err(RenderError::Spec(format!(
                "bin count must be at least 2, got {}",
                self.bins
            )));
        }
        if self.ramp.len() != self.bins {
            return Err(RenderError::Spec(format!(
                "ramp has {} colours for {} bins",
                self.ramp.len(),
                self.bins
            )));
        }
        Ok(())
    }
}

/// Class edges `[min, e_1, …, e_{bins−1}, max]`.
pub fn compute_breaks(values: &[f64], strategy: BreakStrategy, bins: usize) -> Result<Vec<f64>, RenderError> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return Err(RenderError::NoValues);
    }
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    Ok((0..=bins)
        .map(|k| match strategy {
            BreakStrategy::Quantile => quantile_sorted(&sorted, k as f64 / bins as f64),
            BreakStrategy::EqualInterval => lo + (hi - lo) * k as f64 / bins as f64,
        })
        .collect())
}

/// Class of `value`: the first bin whose upper edge is at least `value`.
pub fn bin_index(value: f64, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    (1..bins).find(|&k| value <= edges[k]).map_or(bins - 1, |k| k - 1)
}

/// Three significant figures, fixed notation.
pub fn sig3(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.00".into();
    }
    let round_at = |mag: i32| {
        let f = 10f64.powi(2 - mag);
        (x * f).round() / f
    };
    let mut mag = x.abs().log10().floor() as i32;
    let mut r = round_at(mag);
    let bumped = r.abs().log10().floor() as i32;
    if bumped != mag {
        mag = bumped;
        r = round_at(mag);
    }
    let decimals = (2 - mag).max(0) as usize;
    format!("{r:.decimals$}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const MAP_WIDTH: f64 = 420.0;
const MARGIN: f64 = 20.0;
const TITLE_H: f64 = 28.0;
const LEGEND_ROW: f64 = 16.0;

struct Projection {
    min_lon: f64,
    max_lat: f64,
    x_factor: f64,
    scale: f64,
    height: f64,
}

impl Projection {
    fn fit(regions: &[&RegionBoundary], width: f64) -> Projection {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for r in regions {
            if let Some(rb) = r.geometry.bbox() {
                b = [b[0].min(rb[0]), b[1].min(rb[1]), b[2].max(rb[2]), b[3].max(rb[3])];
            }
        }
        let mean_lat = 0.5 * (b[1] + b[3]);
        let x_factor = mean_lat.to_radians().cos();
        let span_x = ((b[2] - b[0]) * x_factor).max(1e-9);
        let scale = width / span_x;
        Projection {
            min_lon: b[0],
            max_lat: b[3],
            x_factor,
            scale,
            height: ((b[3] - b[1]) * scale).max(1.0),
        }
    }

    fn xy(&self, p: [f64; 2]) -> (f64, f64) {
        (
            (p[0] - self.min_lon) * self.x_factor * self.scale,
            (self.max_lat - p[1]) * self.scale,
        )
    }

    fn path(&self, region: &RegionBoundary) -> String {
        let mut d = String::new();
        for ring in region.geometry.rings() {
            for (k, p) in ring.iter().enumerate() {
                let (x, y) = self.xy(*p);
                let _ = write!(d, "{}{x:.2} {y:.2} ", if k == 0 { "M" } else { "L" });
            }
            d.push_str("Z ");
        }
        d.trim_end().to_string()
    }
}

/// One map panel: regions, classes and legend, drawn at `(x0, y0)`.
/// Returns the SVG fragment and its height.
fn map_panel(
    regions: &[&RegionBoundary],
    values: &BTreeMap<String, f64>,
    edges: &[f64],
    ramp: &[String],
    title: &str,
    x0: f64,
    y0: f64,
) -> (String, f64) {
    let proj = Projection::fit(regions, MAP_WIDTH);
    let mut s = String::new();
    let _ = writeln!(s, "<g class=\"panel\" transform=\"translate({x0:.2},{y0:.2})\">");
    let _ = writeln!(
        s,
        "<text class=\"title\" x=\"0\" y=\"16\" font-size=\"14\">{}</text>",
        escape(title)
    );
    let _ = writeln!(s, "<g transform=\"translate(0,{TITLE_H:.2})\">");
    for r in regions {
        let (fill, class) = match values.get(&r.region_id) {
            Some(v) if v.is_finite() => (ramp[bin_index(*v, edges)].clone(), "region"),
            _ => ("url(#hatch)".to_string(), "region missing"),
        };
        let _ = writeln!(
            s,
            "<path class=\"{class}\" data-region=\"{}\" d=\"{}\" fill=\"{fill}\" fill-rule=\"evenodd\" stroke=\"#444444\" stroke-width=\"0.5\"/>",
            escape(&r.region_id),
            proj.path(r)
        );
    }
    let _ = writeln!(s, "</g>");
    let legend_y = TITLE_H + proj.height + 12.0;
    let _ = writeln!(s, "<g class=\"legend\" transform=\"translate(0,{legend_y:.2})\">");
    for k in 0..edges.len() - 1 {
        let y = k as f64 * LEGEND_ROW;
        let _ = writeln!(
            s,
            "<g class=\"legend-entry\"><rect x=\"0\" y=\"{y:.2}\" width=\"14\" height=\"12\" fill=\"{}\" stroke=\"#444444\" stroke-width=\"0.5\"/><text x=\"20\" y=\"{:.2}\" font-size=\"11\">{} – {}</text></g>",
            ramp[k],
            y + 10.0,
            sig3(edges[k]),
            sig3(edges[k + 1])
        );
    }
    let _ = writeln!(s, "</g>\n</g>");
    let height = legend_y + (edges.len() - 1) as f64 * LEGEND_ROW;
    (s, height)
}

fn svg_document(width: f64, height: f64, body: &str, comments: &[String]) -> String {
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    for c in comments {
        let _ = writeln!(s, "<!-- {} -->", c.replace("--", "- -"));
    }
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.2} {height:.2}\" font-family=\"sans-serif\">"
    );
    s.push_str(
        "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\" patternTransform=\"rotate(45)\"><rect width=\"6\" height=\"6\" fill=\"#ffffff\"/><line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" stroke=\"#888888\" stroke-width=\"2\"/></pattern></defs>\n",
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>");
    s.push_str(body);
    s.push_str("</svg>\n");
    s
}

fn check_known(boundaries: &[RegionBoundary], values: &BTreeMap<String, f64>) -> Result<(), RenderError> {
    let known: BTreeSet<&str> = boundaries.iter().map(|b| b.region_id.as_str()).collect();
    match values.keys().find(|k| !known.contains(k.as_str())) {
        Some(k) => Err(RenderError::UnknownRegion(k.clone())),
        None => Ok(()),
    }
}

fn sorted_regions(boundaries: &[RegionBoundary]) -> Vec<&RegionBoundary> {
    let mut v: Vec<&RegionBoundary> = boundaries.iter().collect();
    v.sort_by(|a, b| a.region_id.cmp(&b.region_id));
    v
}

/// Choropleth of one value per region. Regions without a value are hatched.
/// With [`ScaleScope::PerGroup`] each country group gets its own zoomed
/// panel whose classes come from that group's values only.
pub fn render_choropleth(
    boundaries: &[RegionBoundary],
    values: &BTreeMap<String, f64>,
    spec: &ChoroplethSpec,
    comments: &[String],
) -> Result<String, RenderError> {
    spec.validate()?;
    check_known(boundaries, values)?;
    let regions = sorted_regions(boundaries);
    let groups: Vec<(String, Vec<&RegionBoundary>)> = match spec.scope {
        ScaleScope::Global => vec![(spec.value_label.clone(), regions)],
        ScaleScope::PerGroup => {
            let mut by: BTreeMap<&str, Vec<&RegionBoundary>> = BTreeMap::new();
            for r in regions {
                by.entry(r.group()).or_default().push(r);
            }
            by.into_iter()
                .map(|(g, rs)| {
                    (
                        format!("{} ({})", spec.value_label, if g.is_empty() { "ungrouped" } else { g }),
                        rs,
                    )
                })
                .collect()
        }
    };

    let mut body = String::new();
    let mut x = MARGIN;
    let mut height: f64 = 0.0;
    for (title, rs) in &groups {
        let vals: Vec<f64> = rs.iter().filter_map(|r| values.get(&r.region_id).copied()).collect();
        let edges = compute_breaks(&vals, spec.breaks, spec.bins)?;
        let (frag, h) = map_panel(rs, values, &edges, &spec.ramp, title, x, MARGIN);
        body.push_str(&frag);
        height = height.max(h);
        x += MAP_WIDTH + 2.0 * MARGIN;
    }
    Ok(svg_document(x - MARGIN, height + 2.0 * MARGIN, &body, comments))
}

/// Several maps of the same regions side by side, sharing one set of classes
/// computed from all panels' values.
pub fn render_map_panels(
    boundaries: &[RegionBoundary],
    panels: &[(String, BTreeMap<String, f64>)],
    spec: &ChoroplethSpec,
    comments: &[String],
) -> Result<String, RenderError> {
    spec.validate()?;
    for (_, v) in panels {
        check_known(boundaries, v)?;
    }
    let all: Vec<f64> = panels.iter().flat_map(|(_, v)| v.values().copied()).collect();
    let edges = compute_breaks(&all, spec.breaks, spec.bins)?;
    let regions = sorted_regions(boundaries);
    let mut body = String::new();
    let mut x = MARGIN;
    let mut height: f64 = 0.0;
    for (title, vals) in panels {
        let (frag, h) = map_panel(&regions, vals, &edges, &spec.ramp, title, x, MARGIN);
        body.push_str(&frag);
        height = height.max(h);
        x += MAP_WIDTH + 2.0 * MARGIN;
    }
    Ok(svg_document(x - MARGIN, height + 2.0 * MARGIN, &body, comments))
}

const PLOT: f64 = 300.0;
const AXIS_PAD: f64 = 62.0;

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn covering(values: impl IntoIterator<Item = f64>, include_zero: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.into_iter().filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Axis { lo: 0.0, hi: 1.0 };
        }
        if include_zero {
            lo = lo.min(0.0);
        }
        let pad = ((hi - lo) * 0.05).max(1e-6);
        Axis {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn to_px(&self, v: f64, length: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo) * length
    }
}

fn axis_frame(s: &mut String, x_axis: &Axis, y_axis: &Axis, x_label: &str, y_label: &str, width: f64) {
    let _ = writeln!(
        s,
        "<rect x=\"0\" y=\"0\" width=\"{width:.2}\" height=\"{PLOT:.2}\" fill=\"none\" stroke=\"#444444\"/>"
    );
    for (k, frac) in [0.0, 0.5, 1.0].iter().enumerate() {
        let xv = x_axis.lo + frac * (x_axis.hi - x_axis.lo);
        let yv = y_axis.lo + frac * (y_axis.hi - y_axis.lo);
        let anchor = ["start", "middle", "end"][k];
        let _ = writeln!(
            s,
            "<text class=\"tick\" x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"{anchor}\">{}</text>",
            frac * width,
            PLOT + 14.0,
            sig3(xv)
        );
        let _ = writeln!(
            s,
            "<text class=\"tick\" x=\"-4\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">{}</text>",
            PLOT - frac * PLOT + 3.0,
            sig3(yv)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
        width / 2.0,
        PLOT + 30.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"-52\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90,-52,{:.2})\">{}</text>",
        PLOT / 2.0,
        PLOT / 2.0,
        escape(y_label)
    );
}

/// Scatter on a shared square axis with the identity line.
fn scatter_panel(
    title: &str,
    class: &str,
    points: &[(String, f64, f64, bool)],
    x_label: &str,
    y_label: &str,
    x0: f64,
) -> String {
    let axis = Axis::covering(points.iter().flat_map(|p| [p.1, p.2]), true);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<g class=\"panel {class}\" transform=\"translate({x0:.2},{:.2})\">",
        MARGIN + TITLE_H
    );
    let _ = writeln!(
        s,
        "<text class=\"title\" x=\"0\" y=\"-10\" font-size=\"14\">{}</text>",
        escape(title)
    );
    axis_frame(&mut s, &axis, &axis, x_label, y_label, PLOT);
    let _ = writeln!(
        s,
        "<line class=\"identity\" x1=\"0\" y1=\"{PLOT:.2}\" x2=\"{PLOT:.2}\" y2=\"0\" stroke=\"#999999\" stroke-dasharray=\"4 3\"/>"
    );
    for (id, x, y, degenerate) in points {
        let (px, py) = (axis.to_px(*x, PLOT), PLOT - axis.to_px(*y, PLOT));
        if *degenerate {
            let _ = writeln!(
                s,
                "<path class=\"point degenerate\" data-region=\"{}\" data-x=\"{x}\" data-y=\"{y}\" d=\"M{:.2} {:.2} L{:.2} {:.2} L{:.2} {:.2} Z\" fill=\"none\" stroke=\"#d62728\"/>",
                escape(id),
                px,
                py - 4.0,
                px - 4.0,
                py + 3.0,
                px + 4.0,
                py + 3.0
            );
        } else {
            let _ = writeln!(
                s,
                "<circle class=\"point\" data-region=\"{}\" data-x=\"{x}\" data-y=\"{y}\" cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"#1f77b4\" fill-opacity=\"0.8\"/>",
                escape(id)
            );
        }
    }
    s.push_str("</g>\n");
    s
}

/// Three panels: (A) direct vs smoothed prevalence, (B) direct standard
/// error vs posterior sd, (C) paired 95% intervals per region ordered by the
/// direct estimate. Degenerate regions are drawn with a hollow triangle and
/// have no direct interval in panel C.
pub fn render_comparison(
    direct: &[DirectEstimate],
    posterior: &[PosteriorRow],
    comments: &[String],
) -> Result<String, RenderError> {
    let by_id: BTreeMap<&str, &DirectEstimate> = direct.iter().map(|d| (d.region_id.as_str(), d)).collect();
    if direct.len() != posterior.len() {
        let post_ids: BTreeSet<&str> = posterior.iter().map(|p| p.region_id.as_str()).collect();
        let missing = direct
            .iter()
            .map(|d| d.region_id.as_str())
            .find(|id| !post_ids.contains(id))
            .unwrap_or("?");
        return Err(RenderError::RegionMismatch(missing.to_string()));
    }
    let mut pairs: Vec<(&DirectEstimate, &PosteriorRow)> = posterior
        .iter()
        .map(|p| {
            by_id
                .get(p.region_id.as_str())
                .map(|d| (*d, p))
                .ok_or_else(|| RenderError::RegionMismatch(p.region_id.clone()))
        })
        .collect::<Result<_, _>>()?;
    pairs.sort_by(|a, b| a.0.p_hat.total_cmp(&b.0.p_hat).then(a.0.region_id.cmp(&b.0.region_id)));

    let prev_points: Vec<_> = pairs
        .iter()
        .map(|(d, p)| {
            (
                d.region_id.clone(),
                d.p_hat,
                p.prevalence.mean,
                d.degenerate.is_degenerate(),
            )
        })
        .collect();
    let se_points: Vec<_> = pairs
        .iter()
        .filter_map(|(d, p)| {
            d.std_error()
                .map(|se| (d.region_id.clone(), se, p.prevalence.sd, d.degenerate.is_degenerate()))
        })
        .collect();

    let mut body = String::new();
    let x_a = MARGIN + AXIS_PAD;
    body.push_str(&scatter_panel(
        "A. Prevalence: direct vs smoothed",
        "panel-a",
        &prev_points,
        "direct (weighted) estimate",
        "smoothed posterior mean",
        x_a,
    ));
    let x_b = x_a + PLOT + AXIS_PAD + 2.0 * MARGIN;
    body.push_str(&scatter_panel(
        "B. Uncertainty: direct SE vs posterior sd",
        "panel-b",
        &se_points,
        "direct standard error",
        "posterior standard deviation",
        x_b,
    ));

    // panel C
    let x_c = x_b + PLOT + AXIS_PAD + 2.0 * MARGIN;
    let width_c = (pairs.len() as f64 * 14.0).max(PLOT);
    let direct_ci: Vec<Option<(f64, f64)>> = pairs
        .iter()
        .map(|(d, _)| {
            if d.degenerate.is_degenerate() {
                None
            } else {
                d.confidence_interval()
            }
        })
        .collect();
    let y_axis = Axis::covering(
        direct_ci
            .iter()
            .flatten()
            .flat_map(|c| [c.0, c.1])
            .chain(pairs.iter().flat_map(|(_, p)| [p.prevalence.q025, p.prevalence.q975])),
        true,
    );
    let x_axis = Axis {
        lo: 0.0,
        hi: pairs.len() as f64,
    };
    let _ = writeln!(
        body,
        "<g class=\"panel panel-c\" transform=\"translate({x_c:.2},{:.2})\">",
        MARGIN + TITLE_H
    );
    let _ = writeln!(
        body,
        "<text class=\"title\" x=\"0\" y=\"-10\" font-size=\"14\">C. 95% intervals: direct (grey) vs smoothed (blue)</text>"
    );
    axis_frame(
        &mut body,
        &x_axis,
        &y_axis,
        "regions, ordered by direct estimate",
        "prevalence",
        width_c,
    );
    let zero_y = PLOT - y_axis.to_px(0.0, PLOT);
    let _ = writeln!(
        body,
        "<line class=\"zero\" x1=\"0\" y1=\"{zero_y:.2}\" x2=\"{width_c:.2}\" y2=\"{zero_y:.2}\" stroke=\"#999999\" stroke-dasharray=\"2 2\"/>"
    );
    let slot = width_c / pairs.len().max(1) as f64;
    for (k, ((d, p), ci)) in pairs.iter().zip(&direct_ci).enumerate() {
        let cx = (k as f64 + 0.5) * slot;
        let y = |v: f64| PLOT - y_axis.to_px(v, PLOT);
        let degenerate = d.degenerate != Degeneracy::None;
        let _ = writeln!(
            body,
            "<g class=\"interval-pair{}\" data-region=\"{}\">",
            if degenerate { " degenerate" } else { "" },
            escape(&d.region_id)
        );
        if let Some((lo, hi)) = ci {
            let _ = writeln!(
                body,
                "<line class=\"direct-ci\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#7f7f7f\" stroke-width=\"2\"/><circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"#7f7f7f\"/>",
                cx - 2.5,
                y(*lo),
                cx - 2.5,
                y(*hi),
                cx - 2.5,
                y(d.p_hat)
            );
        }
        let _ = writeln!(
            body,
            "<line class=\"posterior-cri\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#1f77b4\" stroke-width=\"2\"/><circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"#1f77b4\"/>",
            cx + 2.5,
            y(p.prevalence.q025),
            cx + 2.5,
            y(p.prevalence.q975),
            cx + 2.5,
            y(p.prevalence.mean)
        );
        if degenerate {
            let _ = writeln!(
                body,
                "<text class=\"marker\" x=\"{cx:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\" fill=\"#d62728\">▲</text>",
                PLOT - 4.0
            );
        }
        body.push_str("</g>\n");
    }
    body.push_str("</g>\n");

    let width = x_c + width_c + MARGIN;
    let height = MARGIN + TITLE_H + PLOT + 40.0 + MARGIN;
    Ok(svg_document(width, height, &body, comments))
}
