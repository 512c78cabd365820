//! Self-contained SVG charts of traces.
//!
//! Kinds:
//! - `series`: loss, ρ, η̃, g̃ and cos_dist against step, stacked.
//! - `period`: loss and ρ² over one period with phases A/B/C shaded.
//! - `phase`: η̃ against g̃ on log-log axes.
//! - `bounds`: cos_dist with the δ_min/δ_max envelope overlay.
//!
//! Long series are decimated per pixel column keeping the first, minimum,
//! maximum and last sample, so spikes survive.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::TraceRecord;
use crate::envelope::{self, EnvelopeFamily, OverlayForm, OverlayRow};
use crate::error::{Error, Result};
use crate::phases::{self, Phase, SegmentOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    Series,
    Period,
    Phase,
    Bounds,
}

impl PlotKind {
    pub const ALL: [&'static str; 4] = ["series", "period", "phase", "bounds"];
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "series" => Ok(PlotKind::Series),
            "period" => Ok(PlotKind::Period),
            "phase" => Ok(PlotKind::Phase),
            "bounds" => Ok(PlotKind::Bounds),
            other => Err(Error::Config(format!("unknown plot kind {other:?}; known: {}", Self::ALL.join(", ")))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlotOptions {
    pub delta: f64,
    /// Period to show for `period` and to fit envelopes on for `bounds`;
    /// defaults to the middle classified period.
    pub period: Option<usize>,
    /// Needed by `bounds` when drawing from a trace.
    pub eta_lambda: Option<(f64, f64)>,
    pub title: String,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions { delta: 0.1, period: None, eta_lambda: None, title: String::new() }
    }
}

const WIDTH: f64 = 900.0;
const PANEL_H: f64 = 170.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const GAP: f64 = 40.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scale {
    Linear,
    Log,
}

struct Line {
    label: String,
    points: Vec<(f64, f64)>,
    dashed: bool,
}

struct Panel {
    title: String,
    x_scale: Scale,
    y_scale: Scale,
    lines: Vec<Line>,
    /// Shaded x-intervals `(from, to, colour, label)`.
    bands: Vec<(f64, f64, &'static str, &'static str)>,
    x_label: String,
}

impl Panel {
    fn new(title: &str, y_scale: Scale) -> Self {
        Panel {
            title: title.into(),
            x_scale: Scale::Linear,
            y_scale,
            lines: Vec::new(),
            bands: Vec::new(),
            x_label: "step".into(),
        }
    }

    fn line(mut self, label: &str, points: Vec<(f64, f64)>) -> Self {
        self.lines.push(Line { label: label.into(), points, dashed: false });
        self
    }

    fn dashed(mut self, label: &str, points: Vec<(f64, f64)>) -> Self {
        self.lines.push(Line { label: label.into(), points, dashed: true });
        self
    }
}

fn tx(v: f64, s: Scale) -> Option<f64> {
    match s {
        Scale::Linear => v.is_finite().then_some(v),
        Scale::Log => (v > 0.0 && v.is_finite()).then(|| v.log10()),
    }
}

fn range(vals: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return None;
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        let pad = 0.5 * lo.abs().max(1e-3);
        return Some((lo - pad, hi + pad));
    }
    Some((lo, hi))
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.1e}")
    }
}

fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

/// Keeps first, min, max and last of each pixel column, in order.
fn decimate(points: &[(f64, f64)], x0: f64, x1: f64, columns: usize) -> Vec<(f64, f64)> {
    if points.len() <= 4 * columns || x1 <= x0 {
        return points.to_vec();
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < points.len() {
        let col = (((points[i].0 - x0) / (x1 - x0)) * columns as f64) as i64;
        let mut j = i;
        let (mut lo, mut hi) = (i, i);
        while j < points.len() && (((points[j].0 - x0) / (x1 - x0)) * columns as f64) as i64 == col {
            if points[j].1 < points[lo].1 {
                lo = j;
            }
            if points[j].1 > points[hi].1 {
                hi = j;
            }
            j += 1;
        }
        let mut keep = vec![i, lo, hi, j - 1];
        keep.sort_unstable();
        keep.dedup();
        out.extend(keep.into_iter().map(|k| points[k]));
        i = j;
    }
    out
}

fn render(title: &str, panels: &[Panel]) -> Result<String> {
    let height = TOP + panels.len() as f64 * (PANEL_H + GAP) + 10.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
    let plot_w = WIDTH - LEFT - RIGHT;
    for (k, panel) in panels.iter().enumerate() {
        let top = TOP + k as f64 * (PANEL_H + GAP);
        let all: Vec<(f64, f64)> = panel
            .lines
            .iter()
            .flat_map(|l| l.points.iter())
            .filter_map(|&(x, y)| Some((tx(x, panel.x_scale)?, tx(y, panel.y_scale)?)))
            .collect();
        let (xr, yr) = match (range(all.iter().map(|p| p.0)), range(all.iter().map(|p| p.1))) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(Error::Config(format!("panel {:?} has no plottable values", panel.title))),
        };
        let sx = |x: f64| LEFT + (x - xr.0) / (xr.1 - xr.0) * plot_w;
        let sy = |y: f64| top + PANEL_H - (y - yr.0) / (yr.1 - yr.0) * PANEL_H;

        for &(a, b, colour, label) in &panel.bands {
            let (Some(a), Some(b)) = (tx(a, panel.x_scale), tx(b, panel.x_scale)) else { continue };
            let (x0, x1) = (sx(a.max(xr.0)), sx(b.min(xr.1)));
            if x1 < x0 {
                continue;
            }
            let _ = writeln!(
                svg,
                r##"<rect x="{x0:.2}" y="{top:.2}" width="{:.2}" height="{PANEL_H}" fill="{colour}" fill-opacity="0.18"/><text x="{:.2}" y="{:.2}" text-anchor="middle" fill="#444">{label}</text>"##,
                (x1 - x0).max(0.5),
                0.5 * (x0 + x1),
                top + 12.0
            );
        }
        let _ = writeln!(
            svg,
            r##"<rect x="{LEFT}" y="{top}" width="{plot_w}" height="{PANEL_H}" fill="none" stroke="#333"/>"##
        );
        let _ = writeln!(svg, r#"<text x="{LEFT}" y="{:.2}" font-size="12">{}</text>"#, top - 6.0, escape(&panel.title));

        for (axis, (lo, hi), scale) in [("x", xr, panel.x_scale), ("y", yr, panel.y_scale)] {
            let ticks = match scale {
                Scale::Linear => linear_ticks(lo, hi),
                Scale::Log => {
                    let mut t: Vec<f64> = (lo.ceil() as i64..=hi.floor() as i64).map(|e| e as f64).collect();
                    if t.len() > 8 {
                        let stride = t.len().div_ceil(8);
                        t = t.into_iter().step_by(stride).collect();
                    }
                    if t.is_empty() {
                        t = vec![lo, hi];
                    }
                    t
                }
            };
            for t in ticks {
                let label = match scale {
                    Scale::Linear => fmt_tick(t),
                    Scale::Log => fmt_tick(10f64.powf(t)),
                };
                if axis == "x" {
                    let x = sx(t);
                    let y = top + PANEL_H;
                    let _ = writeln!(
                        svg,
                        r##"<line x1="{x:.2}" y1="{y}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"##,
                        y + 4.0,
                        y + 16.0
                    );
                } else {
                    let y = sy(t);
                    let _ = writeln!(
                        svg,
                        r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#333"/><line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
                        LEFT - 4.0,
                        LEFT + plot_w,
                        LEFT - 6.0,
                        y + 4.0
                    );
                }
            }
        }
        let _ = writeln!(
            svg,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="end" fill="#555">{}</text>"##,
            LEFT + plot_w,
            top + PANEL_H + 30.0,
            escape(&panel.x_label)
        );

        for (i, line) in panel.lines.iter().enumerate() {
            let colour = PALETTE[i % PALETTE.len()];
            let pts: Vec<(f64, f64)> = line
                .points
                .iter()
                .filter_map(|&(x, y)| Some((tx(x, panel.x_scale)?, tx(y, panel.y_scale)?)))
                .collect();
            let pts = decimate(&pts, xr.0, xr.1, plot_w as usize);
            let mut d = String::with_capacity(pts.len() * 16);
            for (j, (x, y)) in pts.iter().enumerate() {
                let _ = write!(d, "{}{:.2},{:.2}", if j == 0 { "M" } else { " L" }, sx(*x), sy(*y));
            }
            let dash = if line.dashed { r#" stroke-dasharray="5,3""# } else { "" };
            let _ = writeln!(svg, r#"<path d="{d}" fill="none" stroke="{colour}" stroke-width="1.2"{dash}/>"#);
            let lx = LEFT + plot_w - 150.0;
            let ly = top + 14.0 + 14.0 * i as f64;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{colour}" stroke-width="2"{dash}/><text x="{:.2}" y="{ly:.2}">{}</text>"#,
                ly - 4.0,
                lx + 18.0,
                ly - 4.0,
                lx + 22.0,
                escape(&line.label)
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn series(records: &[TraceRecord], f: impl Fn(&TraceRecord) -> f64) -> Vec<(f64, f64)> {
    records.iter().map(|r| (r.step as f64, f(r))).collect()
}

fn flat(records: &[TraceRecord], y: f64) -> Vec<(f64, f64)> {
    match (records.first(), records.last()) {
        (Some(a), Some(b)) => vec![(a.step as f64, y), (b.step as f64, y)],
        _ => Vec::new(),
    }
}

/// Renders `records` as the requested chart.
pub fn plot_trace(records: &[TraceRecord], kind: PlotKind, opts: &PlotOptions) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Config("trace is empty; nothing to plot".into()));
    }
    let title = if opts.title.is_empty() { format!("{kind:?}") } else { opts.title.clone() };
    match kind {
        PlotKind::Series => {
            let panels = vec![
                Panel::new("training loss (log)", Scale::Log).line("loss", series(records, |r| r.loss)),
                Panel::new("weight norm rho", Scale::Linear).line("rho", series(records, |r| r.rho)),
                Panel::new("effective learning rate eta/rho^2 (log)", Scale::Log)
                    .line("eff_lr", series(records, |r| r.eff_lr)),
                Panel::new("effective gradient norm (log)", Scale::Log)
                    .line("eff_grad_norm", series(records, |r| r.eff_grad_norm)),
                Panel::new("adjacent-iterate cosine distance (log)", Scale::Log)
                    .line("cos_dist", series(records, |r| r.cos_dist))
                    .dashed(&format!("delta = {}", opts.delta), flat(records, opts.delta)),
            ];
            render(&title, &panels)
        }
        PlotKind::Period => {
            let seg = phases::segment_phases(records, &SegmentOptions::new(opts.delta));
            let classified: Vec<_> = seg.classified().collect();
            if classified.is_empty() {
                return Err(Error::Config(format!("no classified period at delta = {}", opts.delta)));
            }
            let p = match opts.period {
                Some(i) => *classified
                    .get(i)
                    .ok_or_else(|| Error::Config(format!("period {i} out of range (0..{})", classified.len())))?,
                None => classified[classified.len() / 2],
            };
            let pad = (p.len() / 4).max(2);
            let (lo, hi) = (p.start.saturating_sub(pad), p.end + pad);
            let window: Vec<TraceRecord> = records.iter().filter(|r| lo <= r.step && r.step <= hi).cloned().collect();
            let bands: Vec<(f64, f64, &str, &str)> = p
                .phases
                .iter()
                .map(|s| {
                    let (colour, label) = match s.phase {
                        Phase::A => ("#ff7f0e", "A"),
                        Phase::B => ("#2ca02c", "B"),
                        Phase::C => ("#d62728", "C"),
                        Phase::Unclassified => ("#999999", "?"),
                    };
                    (s.start as f64 - 0.5, s.end as f64 + 0.5, colour, label)
                })
                .collect();
            let mut loss = Panel::new("training loss (log)", Scale::Log).line("loss", series(&window, |r| r.loss));
            loss.bands = bands.clone();
            let mut norm = Panel::new("squared weight norm rho^2", Scale::Linear).line("rho^2", series(&window, |r| r.rho_sq()));
            norm.bands = bands.clone();
            let mut cd = Panel::new("cosine distance (log)", Scale::Log)
                .line("cos_dist", series(&window, |r| r.cos_dist))
                .dashed(&format!("delta = {}", opts.delta), flat(&window, opts.delta));
            cd.bands = bands;
            render(&format!("{title}: period {} (steps {}-{})", p.index, p.start, p.end), &[loss, norm, cd])
        }
        PlotKind::Phase => {
            let mut panel = Panel::new("effective learning rate vs effective gradient norm", Scale::Log)
                .line("trajectory", records.iter().map(|r| (r.eff_grad_norm, r.eff_lr)).collect());
            panel.x_scale = Scale::Log;
            panel.x_label = "effective gradient norm (log)".into();
            render(&title, &[panel])
        }
        PlotKind::Bounds => {
            let (eta, lambda) = opts
                .eta_lambda
                .ok_or_else(|| Error::Config("bounds plot of a trace needs eta and lambda (a manifest)".into()))?;
            let seg = phases::segment_phases(records, &SegmentOptions::new(opts.delta));
            let classified: Vec<_> = seg.classified().collect();
            if classified.is_empty() {
                return Err(Error::Config(format!("no classified period at delta = {}", opts.delta)));
            }
            let p = match opts.period {
                Some(i) => *classified
                    .get(i)
                    .ok_or_else(|| Error::Config(format!("period {i} out of range (0..{})", classified.len())))?,
                None => classified[classified.len() / 2],
            };
            let b = p.span(Phase::B).expect("classified period has phase B");
            let bounds = envelope::fit_envelopes(records, (b.start, b.end), EnvelopeFamily::Const)?;
            let rows = envelope::delta_overlay(records, &bounds, eta, lambda, OverlayForm::Exact);
            plot_overlay(&rows, &format!("{title}: phase B of period {}", p.index))
        }
    }
}

/// Renders an overlay series (`step,cos_dist,delta_min,delta_max`).
pub fn plot_overlay(rows: &[OverlayRow], title: &str) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Config("overlay is empty; nothing to plot".into()));
    }
    let pick = |f: fn(&OverlayRow) -> f64| rows.iter().map(|r| (r.step as f64, f(r))).collect::<Vec<_>>();
    let panel = Panel::new("cosine distance with envelope bounds (log)", Scale::Log)
        .line("cos_dist", pick(|r| r.cos_dist))
        .dashed("delta_min", pick(|r| r.delta_min))
        .dashed("delta_max", pick(|r| r.delta_max));
    render(title, &[panel])
}

/// Parses an overlay CSV.
pub fn parse_overlay_csv(text: &str) -> Result<Vec<OverlayRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == crate::io::OVERLAY_HEADER => {}
        _ => return Err(Error::Config("not an overlay CSV".into())),
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            let bad = || Error::Config(format!("line {}: malformed overlay row", i + 2));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(OverlayRow {
                step: f[0].parse().map_err(|_| bad())?,
                cos_dist: f[1].parse().map_err(|_| bad())?,
                delta_min: f[2].parse().map_err(|_| bad())?,
                delta_max: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{run, OptimizerConfig};
    use crate::objective::ToyRational;

    fn toy(lambda: f64, steps: usize) -> Vec<TraceRecord> {
        run(&ToyRational, &OptimizerConfig::gd(1.0, lambda, steps), &[0.01, 1.0]).unwrap().records
    }

    fn opts() -> PlotOptions {
        PlotOptions { delta: 0.01, eta_lambda: Some((1.0, 0.01)), ..Default::default() }
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("period".parse::<PlotKind>().unwrap(), PlotKind::Period);
        assert!("pie".parse::<PlotKind>().is_err());
    }

    #[test]
    fn every_kind_renders_the_toy() {
        let recs = toy(0.01, 2000);
        for kind in [PlotKind::Series, PlotKind::Period, PlotKind::Phase, PlotKind::Bounds] {
            let svg = plot_trace(&recs, kind, &opts()).unwrap();
            assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"), "{kind:?}");
            assert!(svg.contains("<path"));
        }
        let period = plot_trace(&recs, PlotKind::Period, &opts()).unwrap();
        for label in [">A<", ">B<", ">C<"] {
            assert!(period.contains(label), "missing {label}");
        }
    }

    #[test]
    fn no_decay_series_renders_and_has_no_period() {
        let recs = toy(0.0, 2000);
        assert!(plot_trace(&recs, PlotKind::Series, &opts()).is_ok());
        assert!(plot_trace(&recs, PlotKind::Period, &opts()).is_err());
    }

    #[test]
    fn empty_trace_is_an_error() {
        assert!(plot_trace(&[], PlotKind::Series, &opts()).is_err());
        assert!(plot_overlay(&[], "x").is_err());
    }

    #[test]
    fn decimation_keeps_extremes() {
        let pts: Vec<(f64, f64)> = (0..10_000).map(|i| (i as f64, if i == 5003 { 100.0 } else { 0.0 })).collect();
        let d = decimate(&pts, 0.0, 9999.0, 100);
        assert!(d.len() < 1000);
        assert!(d.contains(&(5003.0, 100.0)));
        assert_eq!(d.first(), pts.first());
        assert_eq!(d.last(), pts.last());
    }

    #[test]
    fn overlay_roundtrip() {
        let rows = vec![OverlayRow { step: 3, cos_dist: 0.5, delta_min: 0.25, delta_max: 1.0 }];
        let back = parse_overlay_csv(&crate::io::overlay_csv(&rows)).unwrap();
        assert_eq!(back, rows);
        assert!(parse_overlay_csv("a,b\n").is_err());
    }
}
