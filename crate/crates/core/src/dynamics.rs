//! Weight-decayed (S)GD on scale-invariant objectives, with per-step
//! instrumentation of the norm, effective learning rate and adjacent-iterate
//! cosine distance.
//!
//! For plain (S)GD the update is `x ← (1 - ηλ)x - η∇f(x)`. Because the
//! gradient is orthogonal to `x`, the squared norm evolves as
//! `ρ'² = (1 - ηλ)²ρ² + η²g̃²/ρ²` and the run loop checks that identity, and
//! the matching cosine formula, at every step.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{Batch, GradientEval, Objective, Stochasticity};
use crate::vector;

/// Relative tolerance of the online norm-recursion check.
pub const NORM_CHECK_TOL: f64 = 1e-9;
/// Absolute tolerance of the online cosine check.
pub const COS_CHECK_TOL: f64 = 1e-9;

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_ADAM: (f64, f64, f64) = (0.9, 0.999, 1e-8);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Family {
    Gd,
    Sgd,
    SgdMomentum {
        mu: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    /// (S)GD followed by rescaling to a fixed norm; `None` keeps `‖x₀‖`.
    SphereProjected {
        #[serde(default)]
        target_norm: Option<f64>,
    },
}

impl Family {
    /// Families whose norm obeys the closed-form recursion exactly.
    pub fn has_closed_form_norm(&self) -> bool {
        matches!(self, Family::Gd | Family::Sgd)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Gd => "gd",
            Family::Sgd => "sgd",
            Family::SgdMomentum { .. } => "sgd-momentum",
            Family::Adam { .. } => "adam",
            Family::SphereProjected { .. } => "sphere-projected",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchSize {
    Full,
    #[serde(untagged)]
    Size(usize),
}

fn default_batch() -> BatchSize {
    BatchSize::Full
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub eta: f64,
    pub lambda: f64,
    pub family: Family,
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch: BatchSize,
    #[serde(default)]
    pub seed: u64,
    /// Add `λx` to the gradient fed to the accumulator instead of shrinking
    /// `x` multiplicatively. Only meaningful for momentum and Adam.
    #[serde(default)]
    pub coupled_l2: bool,
}

impl OptimizerConfig {
    pub fn gd(eta: f64, lambda: f64, steps: usize) -> Self {
        OptimizerConfig {
            eta,
            lambda,
            family: Family::Gd,
            steps,
            batch: BatchSize::Full,
            seed: 0,
            coupled_l2: false,
        }
    }

    pub fn with_family(mut self, family: Family) -> Self {
        self.family = family;
        self
    }

    pub fn with_batch(mut self, batch: BatchSize) -> Self {
        self.batch = batch;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn eta_lambda(&self) -> f64 {
        self.eta * self.lambda
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Domain(format!("learning rate must be positive, got {}", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Domain(format!("weight decay must be non-negative, got {}", self.lambda)));
        }
        if self.eta_lambda() >= 0.5 {
            return Err(Error::Domain(format!(
                "eta*lambda = {} is outside the small-product regime (< 0.5)",
                self.eta_lambda()
            )));
        }
        match self.family {
            Family::SgdMomentum { mu } if !(0.0..1.0).contains(&mu) => {
                return Err(Error::Domain(format!("momentum {mu} not in [0, 1)")));
            }
            Family::Adam { beta1, beta2, eps }
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) =>
            {
                return Err(Error::Domain("Adam parameters out of range".into()));
            }
            Family::SphereProjected {
                target_norm: Some(r),
            } if !(r > 0.0 && r.is_finite()) => {
                return Err(Error::Domain(format!("target norm must be positive, got {r}")));
            }
            _ => {}
        }
        if let BatchSize::Size(b) = self.batch {
            if b == 0 {
                return Err(Error::Domain("batch size must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One weight-decayed gradient step: `(1 - ηλ)x - η∇f(x)`.
pub fn step(x: &[f64], config: &OptimizerConfig, grad: &GradientEval) -> Vec<f64> {
    let shrink = 1.0 - config.eta * config.lambda;
    x.iter()
        .zip(&grad.gradient)
        .map(|(xi, gi)| shrink * xi - config.eta * gi)
        .collect()
}

/// [`step`] followed by rescaling to `‖x_{t+1}‖ = target_norm`.
pub fn sphere_projected_step(
    x: &[f64],
    config: &OptimizerConfig,
    grad: &GradientEval,
    target_norm: f64,
) -> Result<Vec<f64>> {
    if !(target_norm > 0.0 && target_norm.is_finite()) {
        return Err(Error::Domain(format!("target norm must be positive, got {target_norm}")));
    }
    let next = step(x, config, grad);
    let n = vector::norm(&next);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(vector::scaled(&next, target_norm / n))
}

/// `ρ_{t+1}² = (1 - ηλ)²ρ_t² + η²g̃_t²/ρ_t²`.
pub fn predicted_norm_sq(rho_sq: f64, eta: f64, lambda: f64, eff_grad_norm: f64) -> f64 {
    let shrink = 1.0 - eta * lambda;
    shrink * shrink * rho_sq + eta * eta * eff_grad_norm * eff_grad_norm / rho_sq
}

fn cosine_ratio(rho_sq: f64, eta: f64, lambda: f64, eff_grad_norm: f64) -> f64 {
    let shrink = 1.0 - eta * lambda;
    (eta * eff_grad_norm / (shrink * rho_sq)).powi(2)
}

/// `cos(x_t, x_{t+1}) = (1 + η²g̃²/((1 - ηλ)²ρ⁴))^{-1/2}`.
pub fn predicted_cosine(rho_sq: f64, eta: f64, lambda: f64, eff_grad_norm: f64) -> f64 {
    (1.0 + cosine_ratio(rho_sq, eta, lambda, eff_grad_norm)).powf(-0.5)
}

/// `1 - predicted_cosine`, evaluated without cancellation.
pub fn predicted_cos_dist(rho_sq: f64, eta: f64, lambda: f64, eff_grad_norm: f64) -> f64 {
    let q = cosine_ratio(rho_sq, eta, lambda, eff_grad_norm);
    let s = (1.0 + q).sqrt();
    q / (s * (s + 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub loss: f64,
    pub rho: f64,
    pub grad_norm: f64,
    pub eff_grad_norm: f64,
    /// `η / ρ²`
    pub eff_lr: f64,
    /// `1 - cos(x_t, x_{t+1})`
    pub cos_dist: f64,
    pub train_error: Option<f64>,
}

impl TraceRecord {
    pub fn rho_sq(&self) -> f64 {
        self.rho * self.rho
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredCheckpoint {
    pub step: usize,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// Step whose update produced a non-finite state.
    pub step: usize,
    pub reason: String,
    pub last_record: Option<TraceRecord>,
}

/// Outcome of the online closed-form checks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormCheck {
    pub checked_steps: usize,
    pub max_norm_rel_err: f64,
    pub max_cos_rel_err: f64,
    pub max_cos_dist_abs_err: f64,
    pub first_violation: Option<usize>,
}

impl ClosedFormCheck {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }

    /// Folds in one step's measured vs predicted quantities.
    #[allow(clippy::too_many_arguments)]
    pub fn observe(
        &mut self,
        step: usize,
        rho_sq: f64,
        next_rho_sq: f64,
        cos: f64,
        cos_dist: f64,
        eta: f64,
        lambda: f64,
        eff_grad_norm: f64,
    ) {
        let pred_norm = predicted_norm_sq(rho_sq, eta, lambda, eff_grad_norm);
        let pred_cos = predicted_cosine(rho_sq, eta, lambda, eff_grad_norm);
        let pred_dist = predicted_cos_dist(rho_sq, eta, lambda, eff_grad_norm);
        let norm_err = (next_rho_sq - pred_norm).abs() / pred_norm;
        let cos_err = (cos - pred_cos).abs() / pred_cos;
        let dist_err = (cos_dist - pred_dist).abs();
        self.checked_steps += 1;
        self.max_norm_rel_err = self.max_norm_rel_err.max(norm_err);
        self.max_cos_rel_err = self.max_cos_rel_err.max(cos_err);
        self.max_cos_dist_abs_err = self.max_cos_dist_abs_err.max(dist_err);
        let bad = !(norm_err <= NORM_CHECK_TOL && cos_err <= NORM_CHECK_TOL && dist_err <= COS_CHECK_TOL);
        if bad && self.first_violation.is_none() {
            self.first_violation = Some(step);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub objective: String,
    pub config: OptimizerConfig,
    pub x0: Vec<f64>,
    pub records: Vec<TraceRecord>,
    pub checkpoints: Vec<StoredCheckpoint>,
    /// Last finite iterate.
    pub final_point: Vec<f64>,
    pub truncated: bool,
    pub divergence: Option<DivergenceReport>,
    /// Present for families with the closed-form norm recursion.
    pub closed_form: Option<ClosedFormCheck>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn rho_sq(&self) -> Vec<f64> {
        self.records.iter().map(TraceRecord::rho_sq).collect()
    }

    pub fn cos_dists(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cos_dist).collect()
    }

    pub fn eff_grad_norms(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.eff_grad_norm).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Steps at which to store the iterate `x_t`.
    pub checkpoint_steps: BTreeSet<usize>,
}

/// Per-epoch example order for minibatch objectives: sampling without
/// replacement, reshuffled every epoch from the run seed. A trailing partial
/// batch is dropped.
struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    size: usize,
}

impl BatchSampler {
    fn new(examples: usize, size: usize, seed: u64) -> Self {
        BatchSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..examples).collect(),
            cursor: examples,
            size: size.min(examples),
        }
    }

    fn next(&mut self) -> &[usize] {
        if self.cursor + self.size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let start = self.cursor;
        self.cursor += self.size;
        &self.order[start..self.cursor]
    }
}

enum Accumulator {
    None,
    Momentum { mu: f64, velocity: Vec<f64> },
    Adam { beta1: f64, beta2: f64, eps: f64, m: Vec<f64>, v: Vec<f64>, t: i32 },
}

/// A single optimization run advanced one step at a time.
pub struct Simulator<'a> {
    objective: &'a dyn Objective,
    config: OptimizerConfig,
    x: Vec<f64>,
    t: usize,
    sampler: Option<BatchSampler>,
    accumulator: Accumulator,
    target_norm: Option<f64>,
}

/// What one call to [`Simulator::advance`] produced.
pub struct StepOutcome {
    pub record: TraceRecord,
    pub eval: GradientEval,
    pub next: Vec<f64>,
}

impl<'a> Simulator<'a> {
    pub fn new(objective: &'a dyn Objective, config: &OptimizerConfig, x0: &[f64]) -> Result<Self> {
        config.validate()?;
        let dim = objective.dim();
        if x0.len() != dim {
            return Err(Error::Dimension { expected: dim, got: x0.len() });
        }
        if !vector::is_finite(x0) {
            return Err(Error::Domain("initial point is not finite".into()));
        }
        let rho0 = vector::norm(x0);
        if rho0 == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let sampler = match (objective.spec().stochasticity, config.batch, config.family) {
            (_, _, Family::Gd) | (Stochasticity::FullBatch, _, _) | (_, BatchSize::Full, _) => None,
            (Stochasticity::Minibatch { examples }, BatchSize::Size(b), _) => {
                Some(BatchSampler::new(examples, b, config.seed))
            }
        };
        let accumulator = match config.family {
            Family::SgdMomentum { mu } => Accumulator::Momentum { mu, velocity: vec![0.0; dim] },
            Family::Adam { beta1, beta2, eps } => Accumulator::Adam {
                beta1,
                beta2,
                eps,
                m: vec![0.0; dim],
                v: vec![0.0; dim],
                t: 0,
            },
            _ => Accumulator::None,
        };
        let target_norm = match config.family {
            Family::SphereProjected { target_norm } => Some(target_norm.unwrap_or(rho0)),
            _ => None,
        };
        Ok(Simulator {
            objective,
            config: config.clone(),
            x: x0.to_vec(),
            t: 0,
            sampler,
            accumulator,
            target_norm,
        })
    }

    pub fn step_index(&self) -> usize {
        self.t
    }

    pub fn point(&self) -> &[f64] {
        &self.x
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    fn update(&mut self, grad: &GradientEval) -> Result<Vec<f64>> {
        let eta = self.config.eta;
        let lambda = self.config.lambda;
        let coupled = self.config.coupled_l2;
        let x = &self.x;
        let effective_grad = |i: usize| {
            if coupled {
                grad.gradient[i] + lambda * x[i]
            } else {
                grad.gradient[i]
            }
        };
        let shrink = if coupled { 1.0 } else { 1.0 - eta * lambda };
        let next = match &mut self.accumulator {
            Accumulator::None => match self.target_norm {
                Some(r) => sphere_projected_step(x, &self.config, grad, r)?,
                None => step(x, &self.config, grad),
            },
            Accumulator::Momentum { mu, velocity } => {
                for (i, v) in velocity.iter_mut().enumerate() {
                    *v = *mu * *v + effective_grad(i);
                }
                x.iter()
                    .zip(velocity.iter())
                    .map(|(xi, vi)| shrink * xi - eta * vi)
                    .collect()
            }
            Accumulator::Adam { beta1, beta2, eps, m, v, t } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                let mut next = Vec::with_capacity(x.len());
                for i in 0..x.len() {
                    let g = effective_grad(i);
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * g;
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    next.push(shrink * x[i] - eta * m_hat / (v_hat.sqrt() + *eps));
                }
                next
            }
        };
        Ok(next)
    }

    /// Evaluates at `x_t`, applies the update and returns the step record.
    /// A non-finite gradient or iterate yields `Err(reason)` and leaves the
    /// simulator at `x_t`.
    pub fn advance(&mut self) -> Result<StepOutcome, String> {
        let batch = match self.sampler.as_mut() {
            Some(s) => s.next().to_vec(),
            None => Vec::new(),
        };
        let batch_ref = if self.sampler.is_some() {
            Batch::Indices(&batch)
        } else {
            Batch::Full
        };
        let eval = self
            .objective
            .evaluate(&self.x, batch_ref)
            .map_err(|e| format!("objective evaluation failed: {e}"))?;
        if !eval.value.is_finite() || !vector::is_finite(&eval.gradient) {
            return Err("non-finite gradient".into());
        }
        let next = self.update(&eval).map_err(|e| e.to_string())?;
        let next_norm_sq = vector::norm_sq(&next);
        if !vector::is_finite(&next) || !next_norm_sq.is_finite() {
            return Err("non-finite iterate".into());
        }
        if next_norm_sq == 0.0 {
            return Err("iterate collapsed to the origin".into());
        }
        let rho_sq = eval.rho * eval.rho;
        let record = TraceRecord {
            step: self.t,
            loss: eval.value,
            rho: eval.rho,
            grad_norm: eval.grad_norm,
            eff_grad_norm: eval.eff_grad_norm,
            eff_lr: self.config.eta / rho_sq,
            cos_dist: vector::cosine_distance(&self.x, &next),
            train_error: eval.error,
        };
        self.x.clone_from(&next);
        self.t += 1;
        Ok(StepOutcome { record, eval, next })
    }
}

/// Runs `config.steps` steps from `x0`.
pub fn run(objective: &dyn Objective, config: &OptimizerConfig, x0: &[f64]) -> Result<Trajectory> {
    run_with(objective, config, x0, &RunOptions::default(), |_, _| {})
}

/// [`run`] with checkpointing and an observer called with `(t, x_t)` before
/// every step and once more with the final iterate.
pub fn run_with<F>(
    objective: &dyn Objective,
    config: &OptimizerConfig,
    x0: &[f64],
    options: &RunOptions,
    mut observe: F,
) -> Result<Trajectory>
where
    F: FnMut(usize, &[f64]),
{
    let mut sim = Simulator::new(objective, config, x0)?;
    let check_closed_form = config.family.has_closed_form_norm();
    let mut closed_form = ClosedFormCheck::default();
    let mut records = Vec::with_capacity(config.steps);
    let mut checkpoints = Vec::new();
    let mut divergence = None;

    for _ in 0..config.steps {
        let t = sim.step_index();
        observe(t, sim.point());
        if options.checkpoint_steps.contains(&t) {
            checkpoints.push(StoredCheckpoint { step: t, params: sim.point().to_vec() });
        }
        let prev = sim.point().to_vec();
        match sim.advance() {
            Ok(out) => {
                if check_closed_form {
                    let rho_sq = out.eval.rho * out.eval.rho;
                    closed_form.observe(
                        t,
                        rho_sq,
                        vector::norm_sq(&out.next),
                        vector::cosine(&prev, &out.next),
                        out.record.cos_dist,
                        config.eta,
                        config.lambda,
                        out.eval.eff_grad_norm,
                    );
                }
                records.push(out.record);
            }
            Err(reason) => {
                divergence = Some(DivergenceReport {
                    step: t,
                    reason,
                    last_record: records.last().cloned(),
                });
                break;
            }
        }
    }
    let t = sim.step_index();
    if divergence.is_none() {
        observe(t, sim.point());
        if options.checkpoint_steps.contains(&t) {
            checkpoints.push(StoredCheckpoint { step: t, params: sim.point().to_vec() });
        }
    }
    Ok(Trajectory {
        objective: objective.id().to_string(),
        config: config.clone(),
        x0: x0.to_vec(),
        records,
        checkpoints,
        final_point: sim.point().to_vec(),
        truncated: divergence.is_some(),
        divergence,
        closed_form: check_closed_form.then_some(closed_form),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaleReport {
    pub scale: f64,
    /// `|f(x_t) - f(x'_t)| / (1 + |f(x_t)|)` per compared step.
    pub per_step: Vec<f64>,
    pub max_deviation: f64,
    /// Largest `‖x'_t - c·x_t‖ / (c‖x_t‖)`.
    pub max_iterate_deviation: f64,
    pub compared_steps: usize,
    /// One of the runs diverged before the horizon.
    pub truncated: bool,
}

/// Runs `(x₀, η, λ)` against `(c·x₀, c²η, λ/c²)` in lockstep and measures how
/// far their function values drift apart.
pub fn rescaled_equivalence(
    objective: &dyn Objective,
    config: &OptimizerConfig,
    x0: &[f64],
    c: f64,
    horizon: usize,
) -> Result<RescaleReport> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("rescaling factor must be positive, got {c}")));
    }
    if !matches!(config.family, Family::Gd | Family::Sgd) {
        return Err(Error::Domain("rescaling equivalence is defined for gd/sgd".into()));
    }
    let mut rescaled_cfg = config.clone();
    rescaled_cfg.eta = c * c * config.eta;
    rescaled_cfg.lambda = config.lambda / (c * c);
    let x0_scaled = vector::scaled(x0, c);
    let mut a = Simulator::new(objective, config, x0)?;
    let mut b = Simulator::new(objective, &rescaled_cfg, &x0_scaled)?;
    let mut per_step = Vec::with_capacity(horizon);
    let mut max_iter_dev = 0.0f64;
    let mut truncated = false;
    for _ in 0..horizon {
        let dx: Vec<f64> = a.point().iter().zip(b.point()).map(|(p, q)| q - c * p).collect();
        max_iter_dev = max_iter_dev.max(vector::norm(&dx) / (c * vector::norm(a.point())));
        let (ra, rb) = match (a.advance(), b.advance()) {
            (Ok(ra), Ok(rb)) => (ra.record, rb.record),
            _ => {
                truncated = true;
                break;
            }
        };
        per_step.push((ra.loss - rb.loss).abs() / (1.0 + ra.loss.abs()));
    }
    let max_deviation = per_step.iter().copied().fold(0.0, f64::max);
    Ok(RescaleReport {
        scale: c,
        compared_steps: per_step.len(),
        per_step,
        max_deviation,
        max_iterate_deviation: max_iter_dev,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::ToyRational;

    fn toy_eval(x: &[f64]) -> GradientEval {
        ToyRational.evaluate(x, Batch::Full).unwrap()
    }

    #[test]
    fn single_step_at_unit_diagonal() {
        let cfg = OptimizerConfig::gd(1.0, 0.01, 1);
        let next = step(&[1.0, 1.0], &cfg, &toy_eval(&[1.0, 1.0]));
        assert!((next[0] - 0.49).abs() < 1e-15);
        assert!((next[1] - 1.49).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_pure_decay() {
        let cfg = OptimizerConfig::gd(1.0, 0.01, 1);
        let x = [0.0, 3.0];
        let next = step(&x, &cfg, &toy_eval(&x));
        assert_eq!(next, vec![0.0, 0.99 * 3.0]);
    }

    #[test]
    fn norm_prediction_matches_hand_value() {
        // 0.99²·2 + 1/2 = 1.9602 + 0.5, and 0.49² + 1.49² = 2.4602
        let p = predicted_norm_sq(2.0, 1.0, 0.01, 1.0);
        assert!((p - 2.4602).abs() < 1e-12);
        assert!((p - (0.49f64.powi(2) + 1.49f64.powi(2))).abs() < 1e-12);
        assert_eq!(predicted_norm_sq(2.0, 1.0, 0.01, 0.0), 0.99 * 0.99 * 2.0);
        assert!((predicted_norm_sq(1.0, 0.3, 0.0, 2.0) - (1.0 + 0.09 * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn cosine_prediction_matches_direct_cosine() {
        let direct = vector::cosine(&[1.0, 1.0], &[0.49, 1.49]);
        let pred = predicted_cosine(2.0, 1.0, 0.01, 1.0);
        assert!((pred - direct).abs() < 1e-12);
        assert!((pred - 0.892617).abs() < 1e-6);
        assert_eq!(predicted_cosine(2.0, 1.0, 0.01, 0.0), 1.0);
        assert!(predicted_cosine(2.0, 1.0, 0.01, 1e12) < 1e-9);
    }

    #[test]
    fn stable_cos_dist_agrees_with_naive() {
        for &(r, g) in &[(2.0, 1.0), (0.5, 3.0), (10.0, 0.01)] {
            let naive = 1.0 - predicted_cosine(r, 0.7, 0.01, g);
            assert!((predicted_cos_dist(r, 0.7, 0.01, g) - naive).abs() < 1e-14);
        }
    }

    #[test]
    fn projected_step_lands_on_target_sphere() {
        let cfg = OptimizerConfig::gd(1.0, 0.01, 1);
        let x = [0.3, -0.8];
        let next = sphere_projected_step(&x, &cfg, &toy_eval(&x), 2.5).unwrap();
        assert!((vector::norm(&next) - 2.5).abs() < 1e-15);
        assert!(sphere_projected_step(&x, &cfg, &toy_eval(&x), 0.0).is_err());
    }

    #[test]
    fn no_decay_never_shrinks_norm() {
        let cfg = OptimizerConfig::gd(1.0, 0.0, 500);
        let traj = run(&ToyRational, &cfg, &[0.8, 0.3]).unwrap();
        for w in traj.records.windows(2) {
            assert!(w[1].rho >= w[0].rho);
        }
    }

    #[test]
    fn closed_forms_hold_online() {
        let cfg = OptimizerConfig::gd(1.0, 0.01, 2000);
        let traj = run(&ToyRational, &cfg, &[0.01, 1.0]).unwrap();
        let cf = traj.closed_form.unwrap();
        assert!(cf.passed(), "{cf:?}");
        assert_eq!(cf.checked_steps, 2000);
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = OptimizerConfig::gd(1.0, 0.01, 300);
        let a = run(&ToyRational, &cfg, &[0.01, 1.0]).unwrap();
        let b = run(&ToyRational, &cfg, &[0.01, 1.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoints_carry_their_step() {
        let cfg = OptimizerConfig::gd(1.0, 0.01, 10);
        let opts = RunOptions { checkpoint_steps: [0, 5, 10].into_iter().collect() };
        let traj = run_with(&ToyRational, &cfg, &[0.01, 1.0], &opts, |_, _| {}).unwrap();
        let steps: Vec<usize> = traj.checkpoints.iter().map(|c| c.step).collect();
        assert_eq!(steps, vec![0, 5, 10]);
        assert_eq!(traj.checkpoints[0].params, vec![0.01, 1.0]);
        assert_eq!(traj.checkpoints[2].params, traj.final_point);
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = OptimizerConfig::gd(1.0, 0.01, 1);
        let mut c = base.clone();
        c.eta = 0.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.lambda = 0.6;
        assert!(c.validate().is_err());
        let c = base.clone().with_family(Family::SgdMomentum { mu: 1.0 });
        assert!(c.validate().is_err());
        assert!(run(&ToyRational, &base, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn unit_rescaling_is_exact() {
        let cfg = OptimizerConfig::gd(1.0, 0.01, 0);
        let r = rescaled_equivalence(&ToyRational, &cfg, &[0.01, 1.0], 1.0, 200).unwrap();
        assert_eq!(r.max_deviation, 0.0);
        assert_eq!(r.compared_steps, 200);
    }

    #[test]
    fn momentum_and_adam_run() {
        let x0 = [0.3, 1.0];
        for fam in [
            Family::SgdMomentum { mu: 0.9 },
            Family::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
        ] {
            let cfg = OptimizerConfig::gd(0.05, 0.01, 200).with_family(fam);
            let traj = run(&ToyRational, &cfg, &x0).unwrap();
            assert_eq!(traj.len(), 200);
            assert!(traj.closed_form.is_none());
        }
    }
}
