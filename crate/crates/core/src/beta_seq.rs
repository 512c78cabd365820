//! Recurrent sequences `x_{t+1} = (1 - α)x_t + β_t / x_t`.
//!
//! With `α = 2ηλ`, `β_t = η²g̃_t²` and `x_t = ρ_t²` this is the squared-norm
//! dynamics of weight-decayed gradient descent, so convergence facts proven
//! here transfer to the norm. A sequence is *β-determined* when `β` is
//! constant and *β-undetermined* when `β_t` only stays inside `[a, b]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute slack for comparisons of nearly converged sequences.
const SLACK: f64 = 1e-12;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 0.5 {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha must lie in (0, 0.5), got {alpha}")))
    }
}

/// One step of the recursion.
#[inline]
pub fn recur(x: f64, alpha: f64, beta: f64) -> f64 {
    (1.0 - alpha) * x + beta / x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaDetParams {
    pub alpha: f64,
    pub beta: f64,
    pub x0: f64,
}

impl BetaDetParams {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Domain(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(self.x0 > 0.0 && self.x0.is_finite()) {
            return Err(Error::Domain(format!("x0 must be positive, got {}", self.x0)));
        }
        Ok(())
    }

    /// `√(β/α)`; zero when `β = 0`.
    pub fn stationary(&self) -> f64 {
        (self.beta / self.alpha).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceTrace {
    pub values: Vec<f64>,
    /// `x_t / x*` when the stationary point is positive.
    pub gamma: Option<Vec<f64>>,
}

/// Iterates a β-determined sequence for `steps` steps (`steps + 1` values).
pub fn iterate_det(params: &BetaDetParams, steps: usize) -> Result<SequenceTrace> {
    params.validate()?;
    let mut values = Vec::with_capacity(steps + 1);
    let mut x = params.x0;
    values.push(x);
    for _ in 0..steps {
        x = recur(x, params.alpha, params.beta);
        values.push(x);
    }
    let star = params.stationary();
    let gamma = (star > 0.0).then(|| values.iter().map(|v| v / star).collect());
    Ok(SequenceTrace { values, gamma })
}

/// `φ(γ) = (1 - α)γ + α/γ`, the normalized β-determined map.
pub fn gamma_map(gamma: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * gamma + alpha / gamma
}

/// `φ'(γ) = (1 - α) - α/γ²`
pub fn gamma_map_derivative(gamma: f64, alpha: f64) -> f64 {
    (1.0 - alpha) - alpha / (gamma * gamma)
}

/// Landmarks of `φ` for `0 < α < 0.5`:
/// `α/(1-α) < √(α/(1-α)) < 2√(α(1-α)) < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaLandmarks {
    /// Non-trivial preimage of 1.
    pub pre_stationary: f64,
    /// Minimizer of `φ`.
    pub argmin: f64,
    /// Minimum value of `φ`.
    pub min_value: f64,
}

impl GammaLandmarks {
    pub fn new(alpha: f64) -> Self {
        let r = alpha / (1.0 - alpha);
        GammaLandmarks {
            pre_stationary: r,
            argmin: r.sqrt(),
            min_value: 2.0 * (alpha * (1.0 - alpha)).sqrt(),
        }
    }

    pub fn ordered(&self) -> bool {
        self.pre_stationary < self.argmin && self.argmin < self.min_value && self.min_value < 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub passed: bool,
    /// A `γ` at which the property failed.
    pub witness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaPropertyReport {
    pub alpha: f64,
    pub grid_points: usize,
    pub checks: Vec<PropertyCheck>,
}

impl GammaPropertyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Uniform grid `γ_i = i·max/n`, `i = 1..=n`.
pub fn gamma_grid(n: usize, max: f64) -> Vec<f64> {
    (1..=n).map(|i| i as f64 * max / n as f64).collect()
}

/// Verifies the seven structural facts about `φ` on a grid of `γ` values:
///
/// * (a) `γ < 1 ⇒ φ(γ) > γ`
/// * (b) `γ > 1 ⇒ 1 < φ(γ) < γ`
/// * (c) `φ(γ) = 1` exactly at `α/(1-α)` and `1`
/// * (d) `φ(γ) < 1 ⇔ γ ∈ (α/(1-α), 1)`
/// * (e) `φ` decreasing below `√(α/(1-α))`
/// * (f) `φ` increasing above it
/// * (g) minimum `2√(α(1-α))` attained at `√(α/(1-α))`
pub fn check_gamma_properties(alpha: f64, grid: &[f64]) -> Result<GammaPropertyReport> {
    check_alpha(alpha)?;
    if grid.is_empty() || grid.iter().any(|g| !(*g > 0.0)) {
        return Err(Error::Domain("gamma grid must be non-empty and positive".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let lm = GammaLandmarks::new(alpha);
    let phi: Vec<f64> = grid.iter().map(|&g| gamma_map(g, alpha)).collect();
    // Grid points this close to a landmark are exempt from strict tests
    // that flip exactly at the landmark.
    let near = |g: f64, p: f64| (g - p).abs() <= 1e-12 * p.max(1.0);

    let first_failure = |pred: &dyn Fn(usize) -> bool| -> Option<f64> {
        (0..grid.len()).find(|&i| !pred(i)).map(|i| grid[i])
    };

    let mut checks = Vec::new();
    let mut push = |name: &str, witness: Option<f64>| {
        checks.push(PropertyCheck { name: name.to_string(), passed: witness.is_none(), witness });
    };

    push(
        "17a increasing below the stationary point",
        first_failure(&|i| grid[i] >= 1.0 || phi[i] > grid[i]),
    );
    push(
        "17b decreasing above the stationary point, staying above it",
        first_failure(&|i| grid[i] <= 1.0 || near(grid[i], 1.0) || (phi[i] > 1.0 && phi[i] < grid[i])),
    );

    // (c): both landmarks map to 1, and φ - 1 changes sign exactly twice on
    // the grid, once next to each landmark.
    let mut c_witness = None;
    for root in [lm.pre_stationary, 1.0] {
        if (gamma_map(root, alpha) - 1.0).abs() > 1e-12 {
            c_witness = Some(root);
        }
    }
    let signs: Vec<f64> = phi.iter().map(|p| p - 1.0).collect();
    let mut crossings = Vec::new();
    for i in 1..grid.len() {
        if signs[i - 1] > 0.0 && signs[i] <= 0.0 || signs[i - 1] <= 0.0 && signs[i] > 0.0 {
            crossings.push((grid[i - 1], grid[i]));
        }
    }
    let brackets = |p: f64| crossings.iter().any(|&(lo, hi)| lo <= p + 1e-12 && p <= hi + 1e-12);
    let grid_covers_both = grid[0] < lm.pre_stationary && *grid.last().unwrap() > 1.0;
    if grid_covers_both && !(crossings.len() == 2 && brackets(lm.pre_stationary) && brackets(1.0)) {
        c_witness = c_witness.or(crossings.first().map(|c| c.1).or(Some(lm.pre_stationary)));
    }
    push("17c preimages of the stationary point", c_witness);

    push(
        "17d stays below the stationary point iff in (a/(1-a), 1)",
        first_failure(&|i| {
            let g = grid[i];
            if near(g, lm.pre_stationary) || near(g, 1.0) {
                return true;
            }
            let inside = g > lm.pre_stationary && g < 1.0;
            inside == (phi[i] < 1.0)
        }),
    );
    push(
        "17e decreasing below the minimizer",
        (1..grid.len())
            .find(|&i| grid[i] < lm.argmin && !(phi[i] < phi[i - 1]))
            .map(|i| grid[i]),
    );
    push(
        "17f increasing above the minimizer",
        (1..grid.len())
            .find(|&i| grid[i - 1] > lm.argmin && !(phi[i] > phi[i - 1]))
            .map(|i| grid[i]),
    );
    let at_min = gamma_map(lm.argmin, alpha);
    let g_witness = if (at_min - lm.min_value).abs() > 1e-12 || !lm.ordered() {
        Some(lm.argmin)
    } else {
        first_failure(&|i| phi[i] >= lm.min_value - 1e-15)
    };
    push("17g global minimum 2*sqrt(a(1-a))", g_witness);

    Ok(GammaPropertyReport { alpha, grid_points: grid.len(), checks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetBoundReport {
    pub steps: usize,
    pub stationary: f64,
    pub holds: bool,
    pub first_violation: Option<usize>,
    /// Smallest `(x_t - x*) - (1-2α)^t (x₀ - x*)`.
    pub min_lower_slack: f64,
    /// Smallest `(1-α)^t (x₀ - x*) - (x_t - x*)`.
    pub min_upper_slack: f64,
}

/// Checks `(1-2α)^t (x₀-x*) ≤ x_t - x* ≤ (1-α)^t (x₀-x*)` for every `t`.
pub fn det_convergence_bounds(params: &BetaDetParams, steps: usize) -> Result<DetBoundReport> {
    let trace = iterate_det(params, steps)?;
    let star = params.stationary();
    if params.x0 < star {
        return Err(Error::Domain(format!(
            "x0 = {} must not lie below the stationary point {star}",
            params.x0
        )));
    }
    let gap0 = params.x0 - star;
    let slack = SLACK * star.max(1.0) + 4.0 * f64::EPSILON * star;
    let mut lower_rate = 1.0;
    let mut upper_rate = 1.0;
    let mut first_violation = None;
    let mut min_lower = f64::INFINITY;
    let mut min_upper = f64::INFINITY;
    for (t, &x) in trace.values.iter().enumerate() {
        let gap = x - star;
        let lo = lower_rate * gap0;
        let hi = upper_rate * gap0;
        min_lower = min_lower.min(gap - lo);
        min_upper = min_upper.min(hi - gap);
        let tol = slack + 1e-12 * hi;
        if (gap < lo - tol || gap > hi + tol) && first_violation.is_none() {
            first_violation = Some(t);
        }
        lower_rate *= 1.0 - 2.0 * params.alpha;
        upper_rate *= 1.0 - params.alpha;
    }
    Ok(DetBoundReport {
        steps,
        stationary: star,
        holds: first_violation.is_none(),
        first_violation,
        min_lower_slack: min_lower,
        min_upper_slack: min_upper,
    })
}

/// How `β_t` is drawn from `[a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BetaSampler {
    Uniform,
    /// Each `β_t` is `a` or `b` with equal probability.
    AdversarialExtremes,
    /// `a, b, a, b, ...`
    Alternating,
    /// Explicit series, repeated cyclically.
    Series { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaUndetParams {
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
    pub sampler: BetaSampler,
    pub x0: f64,
    #[serde(default)]
    pub seed: u64,
}

impl BetaUndetParams {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(0.0 <= self.a && self.a <= self.b && self.b.is_finite()) {
            return Err(Error::Domain(format!(
                "need 0 <= a <= b < inf, got a = {}, b = {}",
                self.a, self.b
            )));
        }
        if !(self.x0 > 0.0 && self.x0.is_finite()) {
            return Err(Error::Domain(format!("x0 must be positive, got {}", self.x0)));
        }
        if let BetaSampler::Series { values } = &self.sampler {
            if values.is_empty() || values.iter().any(|v| *v < self.a || *v > self.b) {
                return Err(Error::Domain("beta series must be non-empty and inside [a, b]".into()));
            }
        }
        Ok(())
    }

    /// `[√(a/α), √(b/α)]`, the interval the sequence is attracted to.
    pub fn interval(&self) -> (f64, f64) {
        ((self.a / self.alpha).sqrt(), (self.b / self.alpha).sqrt())
    }

    /// `α√b/(1-α) ≤ √a`, under which the interval is absorbing.
    pub fn absorbing_condition(&self) -> bool {
        self.alpha * self.b.sqrt() / (1.0 - self.alpha) <= self.a.sqrt()
    }

    /// The sampled `β_0, …, β_{steps-1}`.
    pub fn betas(&self, steps: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..steps)
            .map(|t| match &self.sampler {
                BetaSampler::Uniform => {
                    if self.a == self.b {
                        self.a
                    } else {
                        rng.random_range(self.a..=self.b)
                    }
                }
                BetaSampler::AdversarialExtremes => {
                    if rng.random_bool(0.5) {
                        self.a
                    } else {
                        self.b
                    }
                }
                BetaSampler::Alternating => {
                    if t % 2 == 0 {
                        self.a
                    } else {
                        self.b
                    }
                }
                BetaSampler::Series { values } => values[t % values.len()],
            })
            .collect()
    }
}

/// Iterates `x_{t+1} = (1-α)x_t + β_t/x_t` over the given `β` series.
pub fn iterate_undet(alpha: f64, x0: f64, betas: &[f64]) -> Vec<f64> {
    let mut values = Vec::with_capacity(betas.len() + 1);
    let mut x = x0;
    values.push(x);
    for &b in betas {
        x = recur(x, alpha, b);
        values.push(x);
    }
    values
}

/// The squared-norm recursion of weight-decayed GD written as a β-sequence:
/// `x_t = ρ_t²`, `β_t = η²g̃_t²` and retain factor `(1-ηλ)²`, i.e.
/// `α = 2ηλ - η²λ²` rather than the first-order `2ηλ`. The arithmetic is
/// arranged to reproduce the simulator's ρ² series bit for bit.
pub fn norm_sequence(eta: f64, lambda: f64, rho0_sq: f64, eff_grad_norms: &[f64]) -> Vec<f64> {
    let shrink = 1.0 - eta * lambda;
    let retain = shrink * shrink;
    let mut values = Vec::with_capacity(eff_grad_norms.len() + 1);
    let mut x = rho0_sq;
    values.push(x);
    for &g in eff_grad_norms {
        x = retain * x + eta * eta * g * g / x;
        values.push(x);
    }
    values
}

/// `α` of [`norm_sequence`]: `1 - (1-ηλ)²`.
pub fn norm_alpha(eta: f64, lambda: f64) -> f64 {
    let el = eta * lambda;
    el * (2.0 - el)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndetBoundReport {
    pub trace: Vec<f64>,
    /// β-determined run with `β = a`.
    pub lower: Vec<f64>,
    /// β-determined run with `β = b`.
    pub upper: Vec<f64>,
    pub lower_holds: bool,
    pub lower_first_violation: Option<usize>,
    /// Last index (inclusive) on which the upper sandwich is guaranteed.
    pub upper_valid_until: usize,
    /// The guarantee extends to every step.
    pub upper_valid_always: bool,
    pub upper_holds: bool,
    pub upper_first_violation: Option<usize>,
}

impl UndetBoundReport {
    pub fn holds(&self) -> bool {
        self.lower_holds && self.upper_holds
    }
}

/// Sandwiches a β-undetermined run between its `β = a` and `β = b`
/// β-determined companions, on the windows where that is guaranteed.
pub fn undet_bounding_runs(params: &BetaUndetParams, steps: usize) -> Result<UndetBoundReport> {
    params.validate()?;
    let betas = params.betas(steps);
    let trace = iterate_undet(params.alpha, params.x0, &betas);
    let lower = iterate_undet(params.alpha, params.x0, &vec![params.a; steps]);
    let upper = iterate_undet(params.alpha, params.x0, &vec![params.b; steps]);
    let tol = |v: f64| SLACK * v.max(1.0);

    let lower_first_violation = (0..=steps).find(|&t| lower[t] > trace[t] + tol(trace[t]));

    // Guarantee holds through T + 1, where x_0..x_T all exceed √(b/(1-α)).
    let threshold = (params.b / (1.0 - params.alpha)).sqrt();
    let run_above = trace.iter().take_while(|&&x| x > threshold).count();
    let mut upper_valid_until = if run_above == 0 { 0 } else { (run_above).min(steps) };
    let upper_valid_always =
        params.absorbing_condition() && params.x0 > (params.b / params.alpha).sqrt();
    if upper_valid_always {
        upper_valid_until = steps;
    }
    let upper_first_violation =
        (0..=upper_valid_until).find(|&t| trace[t] > upper[t] + tol(upper[t]));

    Ok(UndetBoundReport {
        lower_holds: lower_first_violation.is_none(),
        lower_first_violation,
        upper_valid_until,
        upper_valid_always,
        upper_holds: upper_first_violation.is_none(),
        upper_first_violation,
        trace,
        lower,
        upper,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub interval: (f64, f64),
    pub condition_holds: bool,
    pub entry_time: Option<usize>,
    pub exits_after_entry: usize,
    /// Violations of the linear envelopes (checked when `x₀ > √(b/α)`).
    pub envelope_violations: usize,
    /// Fallback bound `(1-α)√(a/α) + b/√(a/α)` reported when the absorbing
    /// condition fails.
    pub relaxed_upper: Option<f64>,
    pub max_after_entry: Option<f64>,
}

impl IntervalReport {
    pub fn absorbed(&self) -> bool {
        self.entry_time.is_some() && self.exits_after_entry == 0 && self.envelope_violations == 0
    }
}

/// Finds when the sequence enters `[√(a/α), √(b/α)]` and counts exits after
/// entry. When `x₀` starts above the interval the linear envelopes
/// `x_t - √(b/α) ≤ (1-α)^t (x₀ - √(b/α))` (while above the interval) and
/// `(1-2α)^t (x₀ - √(a/α)) ≤ x_t - √(a/α)` are checked too.
pub fn interval_convergence(params: &BetaUndetParams, steps: usize) -> Result<IntervalReport> {
    params.validate()?;
    let betas = params.betas(steps);
    let trace = iterate_undet(params.alpha, params.x0, &betas);
    interval_report(params, &trace)
}

/// [`interval_convergence`] on an already computed trajectory.
pub fn interval_report(params: &BetaUndetParams, trace: &[f64]) -> Result<IntervalReport> {
    params.validate()?;
    let (lo, hi) = params.interval();
    let condition_holds = params.absorbing_condition();
    let inside = |x: f64| x >= lo - SLACK * lo.max(1.0) && x <= hi + SLACK * hi.max(1.0);
    let entry_time = trace.iter().position(|&x| inside(x));
    let (exits_after_entry, max_after_entry) = match entry_time {
        Some(t0) => {
            let exits = trace[t0..].iter().filter(|&&x| !inside(x)).count();
            let max = trace[t0..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (exits, Some(max))
        }
        None => (0, None),
    };
    let mut envelope_violations = 0;
    if params.x0 > hi {
        let mut up = 1.0;
        let mut down = 1.0;
        for &x in trace {
            if x >= hi && x - hi > up * (params.x0 - hi) + SLACK * hi.max(1.0) {
                envelope_violations += 1;
            }
            if x - lo < down * (params.x0 - lo) - SLACK * lo.max(1.0) {
                envelope_violations += 1;
            }
            up *= 1.0 - params.alpha;
            down *= 1.0 - 2.0 * params.alpha;
        }
    }
    let relaxed_upper = (!condition_holds && lo > 0.0)
        .then(|| (1.0 - params.alpha) * lo + params.b / lo);
    Ok(IntervalReport {
        interval: (lo, hi),
        condition_holds,
        entry_time,
        exits_after_entry,
        envelope_violations,
        relaxed_upper,
        max_after_entry,
    })
}

/// Weighted-mean diagnostic `g_t² / ḡ_t²`, where `ḡ_t²` is the average of
/// past squared gradient norms with weights `(1-ηλ)^{2(t-t'-1)}`, normalized.
/// Index 0 has no history and is reported as 1.
pub fn ema_gradient_ratio(grad_norms: &[f64], eta: f64, lambda: f64) -> Vec<f64> {
    let decay = (1.0 - eta * lambda).powi(2);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut out = Vec::with_capacity(grad_norms.len());
    for &g in grad_norms {
        let g2 = g * g;
        if den == 0.0 {
            out.push(1.0);
        } else {
            let mean = num / den;
            out.push(if mean > 0.0 { g2 / mean } else { f64::NAN });
        }
        num = decay * num + g2;
        den = decay * den + 1.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_beta_is_geometric() {
        let p = BetaDetParams { alpha: 0.1, beta: 0.0, x0: 3.0 };
        let tr = iterate_det(&p, 50).unwrap();
        assert!(tr.gamma.is_none());
        for (t, v) in tr.values.iter().enumerate() {
            let expect = 0.9f64.powi(t as i32) * 3.0;
            assert!((v - expect).abs() <= 1e-14 * expect);
        }
    }

    #[test]
    fn stationary_start_is_constant() {
        let p = BetaDetParams { alpha: 0.2, beta: 4.0, x0: (4.0f64 / 0.2).sqrt() };
        let tr = iterate_det(&p, 100).unwrap();
        for v in &tr.values {
            assert!((v - p.x0).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_descent_from_above() {
        let p = BetaDetParams { alpha: 0.1, beta: 1.0, x0: 10.0 };
        let tr = iterate_det(&p, 1000).unwrap();
        let star = 10f64.sqrt();
        assert!((p.stationary() - 3.16228).abs() < 1e-5);
        for w in tr.values.windows(2) {
            assert!(w[1] <= w[0] && w[1] > star);
        }
    }

    #[test]
    fn gamma_map_landmarks() {
        assert_eq!(gamma_map(1.0, 0.3), 1.0);
        assert!((gamma_map(1.0 / 3.0, 0.1) - 0.6).abs() < 1e-15);
        assert!((2.0 * (0.1f64 * 0.9).sqrt() - 0.6).abs() < 1e-15);
        assert!((gamma_map(1.0 / 9.0, 0.1) - 1.0).abs() < 1e-15);
        assert!((gamma_map_derivative(1.0, 0.25) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn properties_hold_for_alpha_tenth() {
        let r = check_gamma_properties(0.1, &gamma_grid(10_000, 2.0)).unwrap();
        assert_eq!(r.checks.len(), 7);
        assert!(r.all_passed(), "{r:#?}");
    }

    #[test]
    fn ordering_chain_near_half() {
        for alpha in [0.45, 0.49, 0.499, 0.4999] {
            assert!(GammaLandmarks::new(alpha).ordered(), "alpha {alpha}");
        }
        assert!(check_gamma_properties(0.5, &[1.0]).is_err());
    }

    #[test]
    fn grid_above_stationary_point_passes() {
        // A grid that skips the interval (a/(1-a), 1) cannot witness 17c's
        // two crossings but every other property still holds.
        let grid: Vec<f64> = gamma_grid(1000, 2.0).into_iter().filter(|g| *g > 1.0).collect();
        let r = check_gamma_properties(0.1, &grid).unwrap();
        assert!(r.all_passed());
    }

    #[test]
    fn det_bounds_hold_and_zero_beta_is_tight() {
        let p = BetaDetParams { alpha: 0.1, beta: 1.0, x0: 10.0 };
        let r = det_convergence_bounds(&p, 500).unwrap();
        assert!(r.holds, "{r:?}");
        let p0 = BetaDetParams { alpha: 0.1, beta: 0.0, x0: 5.0 };
        let r0 = det_convergence_bounds(&p0, 200).unwrap();
        assert!(r0.holds);
        assert!(r0.min_upper_slack.abs() < 1e-12);
        let ps = BetaDetParams { alpha: 0.1, beta: 1.0, x0: 10f64.sqrt() };
        assert!(det_convergence_bounds(&ps, 10).unwrap().holds);
    }

    #[test]
    fn det_bounds_reject_start_below_stationary() {
        let p = BetaDetParams { alpha: 0.1, beta: 1.0, x0: 1.0 };
        assert!(det_convergence_bounds(&p, 10).is_err());
    }

    #[test]
    fn constant_beta_matches_lower_companion() {
        let p = BetaUndetParams {
            alpha: 0.1,
            a: 2.0,
            b: 7.0,
            sampler: BetaSampler::Series { values: vec![2.0] },
            x0: 15.0,
            seed: 0,
        };
        let r = undet_bounding_runs(&p, 300).unwrap();
        assert_eq!(r.trace, r.lower);
        assert!(r.holds());
    }

    #[test]
    fn figure_setting_converges_into_interval() {
        let p = BetaUndetParams {
            alpha: 0.1,
            a: 1.0,
            b: 10.0,
            sampler: BetaSampler::Uniform,
            x0: 20.0,
            seed: 7,
        };
        assert!(p.absorbing_condition());
        let r = interval_convergence(&p, 5000).unwrap();
        assert!((r.interval.0 - 10f64.sqrt()).abs() < 1e-12);
        assert!((r.interval.1 - 10.0).abs() < 1e-12);
        assert!(r.absorbed(), "{r:?}");
    }

    #[test]
    fn collapsed_interval_is_the_stationary_point() {
        let p = BetaUndetParams {
            alpha: 0.2,
            a: 3.0,
            b: 3.0,
            sampler: BetaSampler::Uniform,
            x0: 30.0,
            seed: 1,
        };
        let r = interval_convergence(&p, 2000).unwrap();
        assert!((r.interval.0 - r.interval.1).abs() < 1e-15);
        assert!(r.entry_time.is_some());
        assert_eq!(r.exits_after_entry, 0);
    }

    #[test]
    fn failed_condition_reports_relaxed_bound() {
        let p = BetaUndetParams {
            alpha: 0.4,
            a: 0.01,
            b: 10.0,
            sampler: BetaSampler::Uniform,
            x0: 1.0,
            seed: 2,
        };
        let r = interval_convergence(&p, 100).unwrap();
        assert!(!r.condition_holds);
        assert!(r.relaxed_upper.is_some());
    }

    #[test]
    fn ema_ratio_is_one_for_constant_gradients() {
        let r = ema_gradient_ratio(&[2.0; 20], 0.1, 0.01);
        for v in r {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
}
