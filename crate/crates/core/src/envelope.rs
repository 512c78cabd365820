//! Envelopes on the effective gradient norm and the cosine-distance bounds
//! they imply.

use serde::{Deserialize, Serialize};

use crate::dynamics::{predicted_cos_dist, TraceRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeFamily {
    Const,
    /// `c / (t - t₀)`
    Inverse,
    /// `c / (t - t₀)²`
    InverseSquare,
}

impl EnvelopeFamily {
    fn shape(self, t: f64, t0: f64) -> f64 {
        match self {
            EnvelopeFamily::Const => 1.0,
            EnvelopeFamily::Inverse => 1.0 / (t - t0),
            EnvelopeFamily::InverseSquare => 1.0 / ((t - t0) * (t - t0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub family: EnvelopeFamily,
    pub c: f64,
    /// Ignored by the constant family.
    pub t0: f64,
}

impl Envelope {
    pub fn constant(c: f64) -> Self {
        Envelope { family: EnvelopeFamily::Const, c, t0: 0.0 }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.c * self.family.shape(t, self.t0)
    }
}

/// Lower and upper envelopes `ℓ(t) ≤ g̃_t ≤ L(t)` on the steps
/// `[t_valid, t_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBounds {
    pub lower: Envelope,
    pub upper: Envelope,
    pub t_valid: usize,
    pub t_end: usize,
}

impl GradientBounds {
    pub fn constant(ell: f64, big_l: f64, t_valid: usize, t_end: usize) -> Self {
        GradientBounds {
            lower: Envelope::constant(ell),
            upper: Envelope::constant(big_l),
            t_valid,
            t_end,
        }
    }

    pub fn covers(&self, step: usize) -> bool {
        self.t_valid <= step && step <= self.t_end
    }

    /// `(ℓ(t), L(t))`
    pub fn at(&self, step: usize) -> (f64, f64) {
        let t = step as f64;
        (self.lower.eval(t), self.upper.eval(t))
    }

    /// Steps in the window where `ℓ(t) ≤ g̃_t ≤ L(t)` fails.
    pub fn violations(&self, records: &[TraceRecord]) -> Vec<usize> {
        records
            .iter()
            .filter(|r| self.covers(r.step))
            .filter(|r| {
                let (lo, hi) = self.at(r.step);
                !(lo <= r.eff_grad_norm && r.eff_grad_norm <= hi && lo >= 0.0)
            })
            .map(|r| r.step)
            .collect()
    }
}

/// Sum over the window of `log(c·s(t; t₀))` for the tightest `c` on one side.
struct SideFit {
    c: f64,
    t0: f64,
    cost: f64,
}

fn fit_side(points: &[(f64, f64)], family: EnvelopeFamily, t0: f64, upper: bool) -> Option<SideFit> {
    let mut c = if upper { 0.0f64 } else { f64::INFINITY };
    let mut log_shape = 0.0;
    for &(t, g) in points {
        let s = family.shape(t, t0);
        if !(s > 0.0) || !s.is_finite() {
            return None;
        }
        let ratio = g / s;
        c = if upper { c.max(ratio) } else { c.min(ratio) };
        log_shape += s.ln();
    }
    if !(c > 0.0) || !c.is_finite() {
        return None;
    }
    let n = points.len() as f64;
    // The lower side enters the gap with a minus sign.
    let cost = if upper { n * c.ln() + log_shape } else { -(n * c.ln() + log_shape) };
    Some(SideFit { c, t0, cost })
}

/// Minimizes the side's cost over `t₀ < t_first`, parametrized by the offset
/// `d = t_first - t₀` on a log grid and refined by golden-section search.
fn search_side(points: &[(f64, f64)], family: EnvelopeFamily, upper: bool) -> Option<SideFit> {
    let t_first = points[0].0;
    if family == EnvelopeFamily::Const {
        return fit_side(points, family, 0.0, upper);
    }
    let span = (points[points.len() - 1].0 - t_first).max(1.0);
    let eval = |log_d: f64| fit_side(points, family, t_first - log_d.exp(), upper);
    let (lo, hi) = ((1e-3f64).ln(), (1e4 * span).ln());
    let n = 400;
    let mut best: Option<(f64, SideFit)> = None;
    for i in 0..=n {
        let ld = lo + (hi - lo) * i as f64 / n as f64;
        if let Some(fit) = eval(ld) {
            if best.as_ref().is_none_or(|(_, b)| fit.cost < b.cost) {
                best = Some((ld, fit));
            }
        }
    }
    let (center, mut fit) = best?;
    let step = (hi - lo) / n as f64;
    let (mut a, mut b) = (center - step, center + step);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let x1 = b - phi * (b - a);
        let x2 = a + phi * (b - a);
        let c1 = eval(x1).map_or(f64::INFINITY, |f| f.cost);
        let c2 = eval(x2).map_or(f64::INFINITY, |f| f.cost);
        if c1 < c2 {
            b = x2;
        } else {
            a = x1;
        }
    }
    if let Some(refined) = eval(0.5 * (a + b)) {
        if refined.cost < fit.cost {
            fit = refined;
        }
    }
    Some(fit)
}

/// Tightest envelope pair of `family` bounding `g̃_t` on the inclusive step
/// window: for each `t₀` the constant `c` is the extreme ratio
/// `g̃_t / s(t; t₀)`, and `t₀` minimizes the summed log gap.
pub fn fit_envelopes(
    records: &[TraceRecord],
    window: (usize, usize),
    family: EnvelopeFamily,
) -> Result<GradientBounds> {
    let points: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| window.0 <= r.step && r.step <= window.1)
        .map(|r| (r.step as f64, r.eff_grad_norm))
        .collect();
    if points.is_empty() {
        return Err(Error::Envelope(format!("window {window:?} contains no steps")));
    }
    if points.iter().any(|&(_, g)| !(g > 0.0) || !g.is_finite()) {
        return Err(Error::Envelope("effective gradient norm must be positive on the window".into()));
    }
    let lower = search_side(&points, family, false)
        .ok_or_else(|| Error::Envelope(format!("no valid lower {family:?} envelope")))?;
    let upper = search_side(&points, family, true)
        .ok_or_else(|| Error::Envelope(format!("no valid upper {family:?} envelope")))?;
    let mut bounds = GradientBounds {
        lower: Envelope { family, c: lower.c, t0: lower.t0 },
        upper: Envelope { family, c: upper.c, t0: upper.t0 },
        t_valid: window.0,
        t_end: window.1,
    };
    // `c` is an extreme ratio, so `c·s(t)` can round to the wrong side of
    // the binding sample; nudge by a few ulps until every sample is covered.
    for _ in 0..8 {
        let bad = bounds.violations(records);
        if bad.is_empty() {
            return Ok(bounds);
        }
        bounds.lower.c *= 1.0 - 4.0 * f64::EPSILON;
        bounds.upper.c *= 1.0 + 4.0 * f64::EPSILON;
    }
    Err(Error::Envelope("fitted envelope does not bound the window".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlayRow {
    pub step: usize,
    pub cos_dist: f64,
    pub delta_min: f64,
    pub delta_max: f64,
}

/// Relative slack when comparing an observed cosine distance with a bound.
/// A fitted envelope touches `g̃_t` at its extremal steps, where measurement
/// and formula differ only by rounding.
pub const SANDWICH_RTOL: f64 = 1e-12;

impl OverlayRow {
    pub fn sandwiched(&self) -> bool {
        self.delta_min * (1.0 - SANDWICH_RTOL) <= self.cos_dist && self.cos_dist <= self.delta_max * (1.0 + SANDWICH_RTOL)
    }
}

/// Which formula turns `(ρ_t, ℓ(t), L(t))` into cosine-distance bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlayForm {
    /// The exact one-step cosine distance evaluated at `ℓ(t)` and `L(t)`.
    Exact,
    /// `η²ℓ²/(2ρ⁴)` and `η²L²/(2ρ⁴)`, dropping the `(1-ηλ)` factor and
    /// higher-order terms.
    SmallAngle,
}

/// δ_min/δ_max series on the validity window of `bounds`.
pub fn delta_overlay(
    records: &[TraceRecord],
    bounds: &GradientBounds,
    eta: f64,
    lambda: f64,
    form: OverlayForm,
) -> Vec<OverlayRow> {
    records
        .iter()
        .filter(|r| bounds.covers(r.step))
        .map(|r| {
            let (lo, hi) = bounds.at(r.step);
            let rho_sq = r.rho_sq();
            let (delta_min, delta_max) = match form {
                OverlayForm::Exact => (
                    predicted_cos_dist(rho_sq, eta, lambda, lo),
                    predicted_cos_dist(rho_sq, eta, lambda, hi),
                ),
                OverlayForm::SmallAngle => {
                    let k = eta * eta / (2.0 * rho_sq * rho_sq);
                    (k * lo * lo, k * hi * hi)
                }
            };
            OverlayRow { step: r.step, cos_dist: r.cos_dist, delta_min, delta_max }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(g: impl Fn(f64) -> f64, steps: std::ops::Range<usize>) -> Vec<TraceRecord> {
        steps
            .map(|t| TraceRecord {
                step: t,
                loss: 0.0,
                rho: 1.0,
                grad_norm: g(t as f64),
                eff_grad_norm: g(t as f64),
                eff_lr: 1.0,
                cos_dist: 0.0,
                train_error: None,
            })
            .collect()
    }

    #[test]
    fn constant_series_gives_equal_bounds() {
        let recs = records(|_| 0.7, 0..50);
        let b = fit_envelopes(&recs, (10, 40), EnvelopeFamily::Const).unwrap();
        assert!((b.lower.c - 0.7).abs() < 1e-14);
        assert!((b.upper.c - 0.7).abs() < 1e-14);
        assert!(b.violations(&recs).is_empty());
    }

    #[test]
    fn inverse_family_recovers_member() {
        let t0 = -3.0;
        let recs = records(|t| 1.0 / (t - t0), 0..200);
        let b = fit_envelopes(&recs, (20, 150), EnvelopeFamily::Inverse).unwrap();
        assert!((b.lower.c - 1.0).abs() < 1e-3, "{:?}", b.lower);
        assert!((b.upper.c - 1.0).abs() < 1e-3, "{:?}", b.upper);
        assert!((b.upper.t0 - t0).abs() < 0.1);
    }

    #[test]
    fn inverse_square_bounds_noisy_series() {
        let recs = records(|t| (2.0 + (t * 0.7).sin() * 0.3) / ((t + 5.0) * (t + 5.0)), 0..300);
        let b = fit_envelopes(&recs, (50, 250), EnvelopeFamily::InverseSquare).unwrap();
        assert!(b.violations(&recs).is_empty());
        let constant = fit_envelopes(&recs, (50, 250), EnvelopeFamily::Const).unwrap();
        let gap = |b: &GradientBounds| {
            (50..=250).map(|t| (b.at(t).1 / b.at(t).0).ln()).sum::<f64>()
        };
        assert!(gap(&b) < gap(&constant));
    }

    #[test]
    fn empty_window_is_an_error() {
        let recs = records(|_| 1.0, 0..10);
        assert!(fit_envelopes(&recs, (20, 30), EnvelopeFamily::Const).is_err());
        let zero = records(|_| 0.0, 0..10);
        assert!(fit_envelopes(&zero, (0, 9), EnvelopeFamily::Inverse).is_err());
    }

    #[test]
    fn exact_overlay_sandwiches_by_construction() {
        let (eta, lambda) = (0.5, 0.02);
        let mut recs = records(|t| 0.5 + 0.2 * (t * 0.37).cos(), 0..100);
        for r in &mut recs {
            r.rho = 1.0 + 0.001 * r.step as f64;
            r.cos_dist = predicted_cos_dist(r.rho_sq(), eta, lambda, r.eff_grad_norm);
        }
        let b = fit_envelopes(&recs, (0, 99), EnvelopeFamily::Const).unwrap();
        let rows = delta_overlay(&recs, &b, eta, lambda, OverlayForm::Exact);
        assert_eq!(rows.len(), 100);
        assert!(rows.iter().all(OverlayRow::sandwiched));
        let approx = delta_overlay(&recs, &b, eta, lambda, OverlayForm::SmallAngle);
        assert_eq!(approx.len(), rows.len());
        assert!(approx.iter().all(|a| a.delta_min <= a.delta_max));
    }

    #[test]
    fn sandwich_allows_rounding_only() {
        let row = |cd: f64| OverlayRow { step: 0, cos_dist: cd, delta_min: 1e-3, delta_max: 2e-3 };
        assert!(row(2e-3 * (1.0 + 1e-15)).sandwiched());
        assert!(row(1e-3 * (1.0 - 1e-15)).sandwiched());
        assert!(!row(2e-3 * (1.0 + 1e-9)).sandwiched());
        assert!(!row(0.9e-3).sandwiched());
    }
}
