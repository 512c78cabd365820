//! δ-jumps: detection in recorded trajectories, the norm thresholds below
//! which they become possible or certain, bounds on the time until the first
//! one, and the equilibrium band the squared norm settles into.

use serde::{Deserialize, Serialize};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{predicted_cos_dist, predicted_norm_sq, TraceRecord};
use crate::error::{Error, Result};

/// Exceedances closer than this many steps belong to one event.
pub const DEBOUNCE: usize = 5;

/// Threshold used for toy-objective period detection. The toy's spikes peak
/// at a cosine distance of about 0.05, so 0.1 would never fire.
pub const TOY_DELTA: f64 = 0.01;

/// Above this the small-δ approximations are no longer trustworthy.
pub const LARGE_DELTA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub step: usize,
    pub cos_dist: f64,
    pub delta: f64,
    pub rho_sq: f64,
}

/// Steps with `cos_dist > delta`, debounced by [`DEBOUNCE`].
pub fn detect_jumps(records: &[TraceRecord], delta: f64) -> Vec<JumpEvent> {
    detect_jumps_with(records, delta, DEBOUNCE)
}

/// An exceedance starts a new event only if more than `debounce` steps have
/// passed since the previous exceedance; the first step of each run is kept.
pub fn detect_jumps_with(records: &[TraceRecord], delta: f64, debounce: usize) -> Vec<JumpEvent> {
    let mut events = Vec::new();
    let mut last: Option<usize> = None;
    for r in records {
        if r.cos_dist > delta {
            let fresh = last.is_none_or(|l| r.step - l > debounce);
            if fresh {
                events.push(JumpEvent {
                    step: r.step,
                    cos_dist: r.cos_dist,
                    delta,
                    rho_sq: r.rho_sq(),
                });
            }
            last = Some(r.step);
        }
    }
    events
}

fn check_delta(delta: f64) -> Result<Option<String>> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    Ok((delta >= LARGE_DELTA).then(|| {
        format!("delta = {delta} is not small; the approximate thresholds may be loose")
    }))
}

fn check_rates(eta: f64, lambda: f64) -> Result<()> {
    if !(eta > 0.0) || !(lambda >= 0.0) || eta * lambda >= 0.5 {
        return Err(Error::Domain(format!(
            "need eta > 0, lambda >= 0 and eta*lambda < 0.5 (eta={eta}, lambda={lambda})"
        )));
    }
    Ok(())
}

fn check_bounds(ell: f64, big_l: f64) -> Result<()> {
    if !(ell >= 0.0) || !(big_l >= ell) || !big_l.is_finite() {
        return Err(Error::Domain(format!("need 0 <= ell <= L < inf (ell={ell}, L={big_l})")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpThresholds {
    /// `ηL/√(2δ)`: below this ρ² a δ-jump becomes possible.
    pub possible: f64,
    /// `ηℓ/√(2δ)`: below this ρ² a δ-jump is (approximately) guaranteed.
    pub guaranteed: f64,
    pub warning: Option<String>,
}

/// Small-δ thresholds on ρ² for effective gradients in `[ell, big_l]`.
pub fn jump_thresholds(eta: f64, lambda: f64, ell: f64, big_l: f64, delta: f64) -> Result<JumpThresholds> {
    let warning = check_delta(delta)?;
    check_rates(eta, lambda)?;
    check_bounds(ell, big_l)?;
    let root = (2.0 * delta).sqrt();
    Ok(JumpThresholds {
        possible: eta * big_l / root,
        guaranteed: eta * ell / root,
        warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactThresholds {
    /// `ηL / ((1-ηλ)√(2δ))`. No δ-jump can happen at a larger ρ².
    pub necessary: f64,
    /// `ηℓ / ((1-ηλ)√((1-δ)⁻² - 1))`. Every step at a smaller ρ² is a δ-jump.
    pub sufficient: f64,
}

/// Thresholds that hold without the small-δ and `1 - ηλ ≈ 1` approximations.
///
/// A step is a δ-jump iff `ρ² < ηg̃ / ((1-ηλ)√((1-δ)⁻² - 1))`; the necessary
/// form uses `(1-δ)⁻² - 1 ≥ 2δ`.
pub fn exact_thresholds(eta: f64, lambda: f64, ell: f64, big_l: f64, delta: f64) -> Result<ExactThresholds> {
    check_delta(delta)?;
    if delta >= 1.0 {
        return Err(Error::Domain(format!("delta must be below 1, got {delta}")));
    }
    check_rates(eta, lambda)?;
    check_bounds(ell, big_l)?;
    let shrink = 1.0 - eta * lambda;
    let exact_root = ((1.0 - delta).powi(-2) - 1.0).sqrt();
    Ok(ExactThresholds {
        necessary: eta * big_l / (shrink * (2.0 * delta).sqrt()),
        sufficient: eta * ell / (shrink * exact_root),
    })
}

/// One side of [`JumpTimeBounds`]: a value when the branch precondition
/// holds, otherwise the reason it does not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeBound {
    pub value: Option<f64>,
    pub inapplicable: Option<String>,
}

impl TimeBound {
    fn ok(value: f64) -> Self {
        TimeBound { value: Some(value), inapplicable: None }
    }

    fn skip(reason: String) -> Self {
        TimeBound { value: None, inapplicable: Some(reason) }
    }

    pub fn applicable(&self) -> bool {
        self.value.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpTimeBounds {
    pub kappa: f64,
    pub t_min: TimeBound,
    pub t_max: TimeBound,
}

/// Bounds on the step of the first δ-jump when starting from `rho0_sq`.
///
/// `t_min` is when `κℓ + (1-4ηλ)^t (ρ₀² - κℓ)` reaches `ηL/√(2δ)`; `t_max` is
/// when `κL + (1-2ηλ)^t (ρ₀² - κL)` reaches `ηℓ/√(2δ)`.
pub fn jump_time_bounds(
    rho0_sq: f64,
    eta: f64,
    lambda: f64,
    ell: f64,
    big_l: f64,
    delta: f64,
) -> Result<JumpTimeBounds> {
    check_delta(delta)?;
    check_rates(eta, lambda)?;
    check_bounds(ell, big_l)?;
    if !(lambda > 0.0) {
        return Err(Error::Domain("jump-time bounds need lambda > 0".into()));
    }
    if !(rho0_sq > 0.0) {
        return Err(Error::Domain(format!("rho0_sq must be positive, got {rho0_sq}")));
    }
    let el = eta * lambda;
    let kappa = (eta / (2.0 * lambda)).sqrt();
    let root = (2.0 * delta).sqrt();

    let t_min = if !(rho0_sq > kappa * ell) {
        TimeBound::skip(format!("rho0_sq = {rho0_sq} <= kappa*ell = {}", kappa * ell))
    } else if !(ell == 0.0 || delta < el * big_l * big_l / (ell * ell)) {
        TimeBound::skip(format!("delta = {delta} >= eta*lambda*L^2/ell^2"))
    } else {
        let target = eta * big_l / root - kappa * ell;
        let t = ((rho0_sq - kappa * ell).ln() - target.ln()) / -(1.0 - 4.0 * el).ln();
        TimeBound::ok(t.max(0.0))
    };

    let t_max = if !(rho0_sq > kappa * big_l) {
        TimeBound::skip(format!("rho0_sq = {rho0_sq} <= kappa*L = {}", kappa * big_l))
    } else if !(delta < el * ell * ell / (big_l * big_l)) {
        TimeBound::skip(format!("delta = {delta} >= eta*lambda*ell^2/L^2"))
    } else {
        let target = eta * ell / root - kappa * big_l;
        let t = ((rho0_sq - kappa * big_l).ln() - target.ln()) / -(1.0 - 2.0 * el).ln();
        TimeBound::ok(t.max(0.0))
    };

    Ok(JumpTimeBounds { kappa, t_min, t_max })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumBand {
    /// `√(η/2λ)`
    pub kappa: f64,
    /// `[κℓ, κL]` for ρ².
    pub band: (f64, f64),
    /// `[√(2ηλ)/L, √(2ηλ)/ℓ]` for the effective learning rate.
    pub elr_band: (f64, f64),
    /// Whether `2ηλL ≤ ℓ`.
    pub condition_holds: bool,
    /// `(1-ηλ)²κℓ + η²L²/(κℓ)`, reported when the condition fails.
    pub relaxed_upper: Option<f64>,
    /// The band for the recursion's exact contraction `α' = 1 - (1-ηλ)²`:
    /// `[ηℓ/√α', ηL/√α']`, slightly wider than `band`.
    pub exact_band: (f64, f64),
}

impl EquilibriumBand {
    pub fn contains(&self, rho_sq: f64) -> bool {
        self.band.0 <= rho_sq && rho_sq <= self.band.1
    }

    pub fn exact_contains(&self, rho_sq: f64) -> bool {
        self.exact_band.0 <= rho_sq && rho_sq <= self.exact_band.1
    }
}

pub fn equilibrium_band(eta: f64, lambda: f64, ell: f64, big_l: f64) -> Result<EquilibriumBand> {
    if lambda == 0.0 {
        return Err(Error::Domain("equilibrium band is undefined for lambda = 0".into()));
    }
    check_rates(eta, lambda)?;
    check_bounds(ell, big_l)?;
    let el = eta * lambda;
    let kappa = (eta / (2.0 * lambda)).sqrt();
    let s = (2.0 * el).sqrt();
    let elr_upper = if ell > 0.0 { s / ell } else { f64::INFINITY };
    let condition_holds = 2.0 * el * big_l <= ell;
    let relaxed_upper = (!condition_holds && ell > 0.0).then(|| {
        let shrink = 1.0 - el;
        shrink * shrink * kappa * ell + eta * eta * big_l * big_l / (kappa * ell)
    });
    let alpha_exact = el * (2.0 - el);
    let exact_root = alpha_exact.sqrt();
    Ok(EquilibriumBand {
        kappa,
        band: (kappa * ell, kappa * big_l),
        elr_band: (s / big_l, elr_upper),
        condition_holds,
        relaxed_upper,
        exact_band: (eta * ell / exact_root, eta * big_l / exact_root),
    })
}

/// Effective gradient norms drawn uniformly from `[ell, big_l]`.
pub fn uniform_gradients(ell: f64, big_l: f64, steps: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps)
        .map(|_| if big_l > ell { rng.random_range(ell..=big_l) } else { ell })
        .collect()
}

/// Norm dynamics driven by a prescribed effective-gradient series, recorded
/// in the same shape as a simulated trajectory. Loss is not modeled and set
/// to zero; `cos_dist` comes from the exact one-step formula.
pub fn controlled_norm_run(rho0_sq: f64, eta: f64, lambda: f64, eff_grad_norms: &[f64]) -> Vec<TraceRecord> {
    let mut rho_sq = rho0_sq;
    eff_grad_norms
        .iter()
        .enumerate()
        .map(|(t, &g)| {
            let rho = rho_sq.sqrt();
            let record = TraceRecord {
                step: t,
                loss: 0.0,
                rho,
                grad_norm: g / rho,
                eff_grad_norm: g,
                eff_lr: eta / rho_sq,
                cos_dist: predicted_cos_dist(rho_sq, eta, lambda, g),
                train_error: None,
            };
            rho_sq = predicted_norm_sq(rho_sq, eta, lambda, g);
            record
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: usize, cos_dist: f64) -> TraceRecord {
        TraceRecord {
            step,
            loss: 0.0,
            rho: 1.0,
            grad_norm: 0.0,
            eff_grad_norm: 0.0,
            eff_lr: 1.0,
            cos_dist,
            train_error: None,
        }
    }

    #[test]
    fn no_events_on_flat_series() {
        let recs: Vec<_> = (0..100).map(|t| record(t, 0.0)).collect();
        assert!(detect_jumps(&recs, 0.01).is_empty());
    }

    #[test]
    fn delta_above_range_finds_nothing() {
        let recs: Vec<_> = (0..100).map(|t| record(t, (t as f64 * 0.3).sin().abs() * 0.05)).collect();
        assert!(detect_jumps(&recs, 0.06).is_empty());
        assert!(!detect_jumps(&recs, 0.04).is_empty());
    }

    #[test]
    fn debounce_merges_nearby_exceedances() {
        let hot = [10, 11, 13, 18, 30, 36, 37];
        let recs: Vec<_> = (0..50)
            .map(|t| record(t, if hot.contains(&t) { 0.5 } else { 0.0 }))
            .collect();
        let steps: Vec<_> = detect_jumps(&recs, 0.1).iter().map(|e| e.step).collect();
        // 18 is within 5 of 13, 36 is 6 after 30.
        assert_eq!(steps, vec![10, 30, 36]);
        assert!(detect_jumps(&recs, 0.1).iter().all(|e| e.cos_dist > e.delta));
    }

    #[test]
    fn possible_threshold_example() {
        let th = jump_thresholds(0.01, 0.001, 0.5, 1.0, 0.005).unwrap();
        assert!((th.possible - 0.1).abs() < 1e-15);
        assert!((th.guaranteed - 0.05).abs() < 1e-15);
        assert!(th.warning.is_none());
    }

    #[test]
    fn degenerate_bounds_give_equal_thresholds() {
        let th = jump_thresholds(0.1, 0.01, 0.7, 0.7, 0.01).unwrap();
        assert_eq!(th.possible, th.guaranteed);
    }

    #[test]
    fn threshold_domain_checks() {
        assert!(jump_thresholds(0.1, 0.01, 0.5, 1.0, 0.0).is_err());
        assert!(jump_thresholds(0.1, 0.01, 0.5, 1.0, -1.0).is_err());
        assert!(jump_thresholds(0.1, 0.01, 1.5, 1.0, 0.01).is_err());
        assert!(jump_thresholds(0.1, 0.01, 0.5, 1.0, 0.2).unwrap().warning.is_some());
    }

    #[test]
    fn exact_thresholds_match_cosine_formula() {
        let (eta, lambda, g, delta) = (0.3, 0.02, 0.8, 0.01);
        let th = exact_thresholds(eta, lambda, g, g, delta).unwrap();
        let below = th.sufficient * (1.0 - 1e-9);
        let above = th.sufficient * (1.0 + 1e-9);
        assert!(predicted_cos_dist(below, eta, lambda, g) > delta);
        assert!(predicted_cos_dist(above, eta, lambda, g) <= delta);
        assert!(th.necessary >= th.sufficient);
    }

    #[test]
    fn worked_time_bound_example() {
        let b = jump_time_bounds(5.0, 0.01, 0.001, 0.5, 1.0, 1e-5).unwrap();
        assert!((b.kappa - 5f64.sqrt()).abs() < 1e-12);
        let t = b.t_min.value.unwrap();
        assert!((t - 31119.0).abs() < 2.0, "t_min = {t}");
        assert!(!b.t_max.applicable());
        assert!(b.t_max.inapplicable.as_deref().unwrap().contains("delta"));
    }

    #[test]
    fn start_below_threshold_gives_zero() {
        let b = jump_time_bounds(1.5, 0.01, 0.001, 0.5, 1.0, 1e-5).unwrap();
        assert_eq!(b.t_min.value, Some(0.0));
    }

    #[test]
    fn start_below_band_is_flagged() {
        let b = jump_time_bounds(1.0, 0.01, 0.001, 0.5, 1.0, 1e-5).unwrap();
        assert!(!b.t_min.applicable());
        assert!(!b.t_max.applicable());
    }

    #[test]
    fn band_example() {
        let band = equilibrium_band(0.01, 0.001, 0.5, 1.0).unwrap();
        assert!((band.kappa - 5f64.sqrt()).abs() < 1e-12);
        assert!((band.band.0 - 1.118033988749895).abs() < 1e-12);
        assert!((band.band.1 - 2.23606797749979).abs() < 1e-12);
        assert!(band.condition_holds);
        assert!(band.relaxed_upper.is_none());
        assert!(band.exact_band.0 > band.band.0 && band.exact_band.1 > band.band.1);
    }

    #[test]
    fn band_degenerate_and_errors() {
        let band = equilibrium_band(0.1, 0.01, 0.6, 0.6).unwrap();
        assert_eq!(band.band.0, band.band.1);
        assert!(equilibrium_band(0.1, 0.0, 0.5, 1.0).is_err());
        let loose = equilibrium_band(0.5, 0.4, 0.1, 1.0).unwrap();
        assert!(!loose.condition_holds);
        assert!(loose.relaxed_upper.is_some());
    }

    #[test]
    fn band_scales_with_rescaling() {
        let (eta, lambda, c) = (0.05, 0.02, 3.0);
        let a = equilibrium_band(eta, lambda, 0.4, 1.2).unwrap();
        let b = equilibrium_band(c * c * eta, lambda / (c * c), 0.4 / c, 1.2 / c).unwrap();
        // The effective gradient of c·x equals that of x, so bounds are
        // shared; κ scales by c².
        let b_same = equilibrium_band(c * c * eta, lambda / (c * c), 0.4, 1.2).unwrap();
        assert!((b_same.band.0 / a.band.0 - c * c).abs() < 1e-12);
        assert!((b_same.elr_band.0 - a.elr_band.0).abs() < 1e-15);
        assert!((b_same.elr_band.1 - a.elr_band.1).abs() < 1e-15);
        assert!(b.kappa > a.kappa);
    }

    #[test]
    fn elr_band_is_image_of_band() {
        let (eta, lambda) = (0.1, 0.005);
        let band = equilibrium_band(eta, lambda, 0.3, 0.9).unwrap();
        assert!((eta / band.band.1 - band.elr_band.0).abs() < 1e-15);
        assert!((eta / band.band.0 - band.elr_band.1).abs() < 1e-14);
    }

    #[test]
    fn controlled_run_follows_norm_recursion() {
        let g = uniform_gradients(0.5, 1.0, 100, 3);
        assert!(g.iter().all(|&x| (0.5..=1.0).contains(&x)));
        let recs = controlled_norm_run(5.0, 0.1, 0.01, &g);
        let seq = crate::beta_seq::norm_sequence(0.1, 0.01, 5.0, &g);
        for (r, x) in recs.iter().zip(&seq) {
            assert_eq!(r.eff_lr, 0.1 / x);
        }
    }
}
