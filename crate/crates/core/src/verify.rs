//! The property battery behind `sidyn verify`.
//!
//! Each suite is a list of named checks; a check that fails carries a
//! witness (the step, trial or point where it broke). A suite passes only if
//! every check does.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beta_seq::{self, BetaDetParams, BetaSampler, BetaUndetParams};
use crate::certify::{self, CLOSED_FORM_TOL, NETWORK_TOL};
use crate::dynamics::{self, Family, OptimizerConfig, TraceRecord, Trajectory};
use crate::envelope::{self, EnvelopeFamily, OverlayForm};
use crate::error::{Error, Result};
use crate::io;
use crate::jumps::{self, TOY_DELTA};
use crate::objective::{Batch, Objective, ToyRational};
use crate::phases::{self, Phase, SegmentOptions, Segmentation};
use crate::sinet::{self, SiNet};
use crate::vector;

pub const SUITES: &[&str] = &[
    "closed-forms",
    "jump-theory",
    "beta-seq",
    "rescaling",
    "periodicity",
    "certification",
    "si-net",
];

/// Jump-delimited periods of the toy run at `x0 = (0.01, 1)`, `η = 1`,
/// `λ = 0.01`, 2·10⁴ steps, `δ = 0.01`.
pub const TOY_PERIODS: usize = 723;
pub const TOY_X0: [f64; 2] = [0.01, 1.0];

/// The pinned network study: preset, optimizer and detection threshold.
pub const SINET_PRESET: &str = "blobs4";
pub const SINET_DELTA: f64 = 0.1;
pub const SINET_CHECKPOINT_EVERY: usize = 25;

pub fn sinet_config() -> OptimizerConfig {
    OptimizerConfig::gd(0.1, 0.03, 10_000)
}

/// `(ρ², η, λ, g̃) ↦ ρ'²`; swappable so the battery can be mutation-tested.
pub type NormModel = fn(f64, f64, f64, f64) -> f64;

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub norm_model: NormModel,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { norm_model: dynamics::predicted_norm_sq }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub witness: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub runtime_ms: u128,
}

impl SuiteReport {
    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub suites: Vec<SuiteReport>,
}

impl VerificationReport {
    pub fn suite(&self, name: &str) -> Option<&SuiteReport> {
        self.suites.iter().find(|s| s.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.suites {
            out.push_str(&format!(
                "[{}] {} ({} checks, {} ms)\n",
                if s.passed { "PASS" } else { "FAIL" },
                s.name,
                s.checks.len(),
                s.runtime_ms
            ));
            for c in &s.checks {
                out.push_str(&format!("  {} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail));
                if let Some(w) = &c.witness {
                    out.push_str(&format!(" (witness: {w})"));
                }
                out.push('\n');
            }
        }
        out.push_str(if self.passed { "all suites passed\n" } else { "verification FAILED\n" });
        out
    }

    /// Writes `verification.json` and `verification.txt` into `dir`.
    pub fn write(&self, dir: &std::path::Path) -> Result<Vec<io::ArtifactRef>> {
        io::create_dir(dir)?;
        Ok(vec![
            io::write_artifact(dir, "verification.json", &io::to_json_bytes(self)?)?,
            io::write_artifact(dir, "verification.txt", self.to_text().as_bytes())?,
        ])
    }
}

struct Suite {
    name: &'static str,
    checks: Vec<Check>,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Suite { name, checks: Vec::new() }
    }

    fn check(&mut self, name: &str, passed: bool, detail: String, witness: Option<String>) {
        self.checks.push(Check { name: name.into(), passed, detail, witness: if passed { None } else { witness } });
    }

    /// Records an error from a setup step as a failed check.
    fn guard<T>(&mut self, name: &str, r: Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.check(name, false, format!("error: {e}"), None);
                None
            }
        }
    }
}

/// Runs `selector` (`all` or one suite name).
pub fn verify(selector: &str) -> Result<VerificationReport> {
    verify_with(selector, &VerifyOptions::default())
}

pub fn verify_with(selector: &str, opts: &VerifyOptions) -> Result<VerificationReport> {
    let names: Vec<&str> = match selector {
        "all" => SUITES.to_vec(),
        s if SUITES.contains(&s) => vec![s],
        other => {
            return Err(Error::Config(format!("unknown suite {other:?}; known: all, {}", SUITES.join(", "))))
        }
    };
    let suites: Vec<SuiteReport> = names
        .into_iter()
        .map(|name| {
            let start = Instant::now();
            let suite = match name {
                "closed-forms" => closed_forms(opts),
                "jump-theory" => jump_theory(),
                "beta-seq" => beta_seq_suite(),
                "rescaling" => rescaling(),
                "periodicity" => periodicity(),
                "certification" => certification(),
                "si-net" => sinet_suite(),
                _ => unreachable!(),
            };
            SuiteReport {
                name: suite.name.to_string(),
                passed: suite.checks.iter().all(|c| c.passed),
                checks: suite.checks,
                runtime_ms: start.elapsed().as_millis(),
            }
        })
        .collect();
    Ok(VerificationReport { passed: suites.iter().all(|s| s.passed), suites })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn toy_run(eta: f64, lambda: f64, steps: usize) -> Result<Trajectory> {
    dynamics::run(&ToyRational, &OptimizerConfig::gd(eta, lambda, steps), &TOY_X0)
}

/// Largest relative error of measured `ρ_{t+1}²` against `model`, and the
/// first step above `tol`.
fn norm_model_errors(traj: &Trajectory, model: NormModel, tol: f64) -> (f64, Option<(usize, f64, f64)>) {
    let (eta, lambda) = (traj.config.eta, traj.config.lambda);
    let next_sq: Vec<f64> = traj
        .records
        .iter()
        .skip(1)
        .map(TraceRecord::rho_sq)
        .chain(std::iter::once(vector::norm_sq(&traj.final_point)))
        .collect();
    let mut worst = 0.0f64;
    let mut first = None;
    for (r, &measured) in traj.records.iter().zip(&next_sq) {
        let predicted = model(r.rho_sq(), eta, lambda, r.eff_grad_norm);
        let e = rel(measured, predicted);
        worst = worst.max(if e.is_nan() { f64::INFINITY } else { e });
        if !(e <= tol) && first.is_none() {
            first = Some((r.step, measured, predicted));
        }
    }
    (worst, first)
}

fn closed_forms(opts: &VerifyOptions) -> Suite {
    let mut s = Suite::new("closed-forms");
    let (eta, lambda, steps) = (1.0, 0.01, 10_000);
    let cfg = OptimizerConfig::gd(eta, lambda, steps);
    let mut iterates = Vec::with_capacity(steps + 1);
    let Some(traj) = s.guard(
        "toy run",
        dynamics::run_with(&ToyRational, &cfg, &TOY_X0, &Default::default(), |_, x| iterates.push(x.to_vec())),
    ) else {
        return s;
    };

    let (worst, first) = norm_model_errors(&traj, opts.norm_model, 1e-9);
    s.check(
        "norm recursion",
        first.is_none(),
        format!("max relative error {worst:.2e} over {steps} steps (tol 1e-9)"),
        first.map(|(t, m, p)| format!("step {t}: measured {m:e}, predicted {p:e}")),
    );

    let mut worst_cos = 0.0f64;
    let mut worst_dist = 0.0f64;
    let mut first_bad = None;
    for (r, w) in traj.records.iter().zip(iterates.windows(2)) {
        let cos = vector::cosine(&w[0], &w[1]);
        let e = rel(cos, dynamics::predicted_cosine(r.rho_sq(), eta, lambda, r.eff_grad_norm));
        let d = (vector::cosine_distance(&w[0], &w[1]) - r.cos_dist).abs();
        worst_cos = worst_cos.max(e);
        worst_dist = worst_dist.max(d);
        if !(e <= 1e-9 && d <= 1e-9) && first_bad.is_none() {
            first_bad = Some(r.step);
        }
    }
    s.check(
        "cosine closed form",
        first_bad.is_none(),
        format!("max relative cosine error {worst_cos:.2e}, max |cos_dist error| {worst_dist:.2e}"),
        first_bad.map(|t| format!("step {t}")),
    );

    if let Some(z) = s.guard("lambda = 0 run", toy_run(1.0, 0.0, steps)) {
        let bad = z.records.windows(2).find(|w| w[1].rho < w[0].rho).map(|w| w[1].step);
        s.check(
            "norm non-decreasing without decay",
            bad.is_none(),
            format!("{} steps", z.records.len()),
            bad.map(|t| format!("step {t}")),
        );
    }

    // (0, 3) is a critical point, so the run is pure decay.
    let decay = OptimizerConfig::gd(0.5, 0.02, 1000);
    if let Some(z) = s.guard("zero-gradient run", dynamics::run(&ToyRational, &decay, &[0.0, 3.0])) {
        let shrink = 1.0 - decay.eta_lambda();
        let bad = z.records.iter().find(|r| rel(r.rho, 3.0 * shrink.powi(r.step as i32)) > 1e-12).map(|r| r.step);
        s.check(
            "geometric decay at zero gradient",
            bad.is_none(),
            format!("rate {shrink} over {} steps", z.records.len()),
            bad.map(|t| format!("step {t}")),
        );
    }

    if let Some(again) = s.guard("repeat run", toy_run(eta, lambda, steps)) {
        let same = io::trace_csv(&traj.records) == io::trace_csv(&again.records);
        s.check("deterministic trace", same, "two identical runs give identical CSV bytes".into(), None);
    }

    // Minibatch SGD on a small network: the recursion holds per step with
    // the minibatch gradient.
    let net = sinet::preset("tiny").and_then(|p| p.build().ok());
    if let Some(net) = s.guard("tiny net", net.ok_or_else(|| Error::Config("tiny preset".into()))) {
        let cfg = OptimizerConfig::gd(0.2, 0.01, 300)
            .with_family(Family::Sgd)
            .with_batch(dynamics::BatchSize::Size(8))
            .with_seed(5);
        if let Some(t) = s.guard("sgd run", dynamics::run(&net, &cfg, net.initial_point())) {
            let (worst, first) = norm_model_errors(&t, opts.norm_model, 1e-9);
            s.check(
                "norm recursion under minibatch sgd",
                first.is_none(),
                format!("max relative error {worst:.2e} over {} steps", t.records.len()),
                first.map(|(t, m, p)| format!("step {t}: measured {m:e}, predicted {p:e}")),
            );
            let again = dynamics::run(&net, &cfg, net.initial_point()).map(|a| io::trace_csv(&a.records));
            s.check(
                "deterministic sgd trace",
                again.ok().as_deref() == Some(io::trace_csv(&t.records).as_str()),
                "same seed gives identical CSV bytes".into(),
                None,
            );
        }
    }
    s
}

/// Randomized controlled-gradient configuration for the threshold checks.
struct Synthetic {
    eta: f64,
    lambda: f64,
    ell: f64,
    big_l: f64,
    delta: f64,
    rho0_sq: f64,
}

fn threshold_configs(rng: &mut ChaCha8Rng, n: usize) -> Vec<Synthetic> {
    (0..n)
        .map(|_| {
            let eta: f64 = 10f64.powf(rng.random_range(-2.0..0.0));
            let el: f64 = 10f64.powf(rng.random_range(-3.0..-1.0));
            let big_l: f64 = 10f64.powf(rng.random_range(-1.0..1.0));
            let ell = big_l * rng.random_range(0.2..1.0);
            let delta = el * rng.random_range(0.2..5.0);
            let kappa = (eta / (2.0 * el / eta)).sqrt();
            let rho0_sq = kappa * big_l * rng.random_range(0.5..5.0);
            Synthetic { eta, lambda: el / eta, ell, big_l, delta, rho0_sq }
        })
        .collect()
}

/// Configurations satisfying both jump-time preconditions, started above the
/// possible-jump threshold.
fn bracket_configs(rng: &mut ChaCha8Rng, n: usize) -> Vec<Synthetic> {
    (0..n)
        .map(|_| {
            let eta: f64 = 10f64.powf(rng.random_range(-2.0..0.0));
            let el: f64 = 10f64.powf(rng.random_range(-3.5..-2.0));
            let lambda = el / eta;
            let big_l: f64 = 10f64.powf(rng.random_range(-1.0..1.0));
            let ell = big_l * rng.random_range(0.5..0.95);
            let delta = el * ell * ell / (big_l * big_l) * rng.random_range(0.1..0.8);
            let kappa = (eta / (2.0 * lambda)).sqrt();
            let possible = eta * big_l / (2.0 * delta).sqrt();
            let rho0_sq = (kappa * big_l).max(possible) * rng.random_range(1.5..5.0);
            Synthetic { eta, lambda, ell, big_l, delta, rho0_sq }
        })
        .collect()
}

/// First step at which the lower envelope of `ρ_t²` used by the `t_min`
/// bound falls to the possible-jump threshold, found by iteration.
pub fn t_min_oracle(rho0_sq: f64, eta: f64, lambda: f64, ell: f64, big_l: f64, delta: f64) -> usize {
    let floor = (eta / (2.0 * lambda)).sqrt() * ell;
    let threshold = eta * big_l / (2.0 * delta).sqrt();
    let rate = 1.0 - 4.0 * eta * lambda;
    let mut gap = rho0_sq - floor;
    let mut t = 0;
    while floor + gap > threshold {
        gap *= rate;
        t += 1;
    }
    t
}

/// Band-absorption setting: `η = 1`, gradients uniform on `[ℓ, L]` chosen so
/// that the exact band is `[√10, 10]`, `ρ₀² = 50`.
pub fn band_setting(eta_lambda: f64) -> (f64, f64, f64, f64) {
    let eta = 1.0;
    let lambda = eta_lambda / eta;
    let alpha = beta_seq::norm_alpha(eta, lambda);
    let ell = 10f64.sqrt() * alpha.sqrt() / eta;
    let big_l = 10.0 * alpha.sqrt() / eta;
    (eta, lambda, ell, big_l)
}

fn jump_theory() -> Suite {
    let mut s = Suite::new("jump-theory");

    if let Some(th) = s.guard("thresholds", jumps::jump_thresholds(0.01, 0.001, 0.5, 1.0, 0.005)) {
        s.check(
            "possible-jump threshold example",
            (th.possible - 0.1).abs() < 1e-12,
            format!("eta L / sqrt(2 delta) = {}", th.possible),
            Some(format!("{}", th.possible)),
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x7e57);
    let mut jump_steps = 0usize;
    let mut above = Vec::new();
    let mut below = 0usize;
    let mut missed = Vec::new();
    for (i, c) in threshold_configs(&mut rng, 50).iter().enumerate() {
        let g = jumps::uniform_gradients(c.ell, c.big_l, 5000, i as u64);
        let recs = jumps::controlled_norm_run(c.rho0_sq, c.eta, c.lambda, &g);
        let Some(th) = s.guard("exact thresholds", jumps::exact_thresholds(c.eta, c.lambda, c.ell, c.big_l, c.delta))
        else {
            return s;
        };
        for r in &recs {
            let jump = r.cos_dist > c.delta;
            if jump {
                jump_steps += 1;
                if r.rho_sq() >= th.necessary {
                    above.push(format!("config {i} step {}", r.step));
                }
            }
            if r.rho_sq() < th.sufficient {
                below += 1;
                if !jump {
                    missed.push(format!("config {i} step {}", r.step));
                }
            }
        }
    }
    s.check(
        "no jump above the necessary threshold",
        above.is_empty(),
        format!("{jump_steps} jump steps over 50 configs, {} above", above.len()),
        above.first().cloned(),
    );
    s.check(
        "every step below the sufficient threshold jumps",
        missed.is_empty() && below > 0,
        format!("{below} steps below, {} without a jump", missed.len()),
        missed.first().cloned(),
    );

    let mut inside = 0;
    let mut outside = Vec::new();
    for (i, c) in bracket_configs(&mut rng, 50).iter().enumerate() {
        let Some(b) = s.guard(
            "time bounds",
            jumps::jump_time_bounds(c.rho0_sq, c.eta, c.lambda, c.ell, c.big_l, c.delta),
        ) else {
            return s;
        };
        let (Some(lo), Some(hi)) = (b.t_min.value, b.t_max.value) else {
            outside.push(format!("config {i}: bound inapplicable"));
            continue;
        };
        let steps = (hi * 1.5) as usize + 10;
        let g = jumps::uniform_gradients(c.ell, c.big_l, steps, 1000 + i as u64);
        let recs = jumps::controlled_norm_run(c.rho0_sq, c.eta, c.lambda, &g);
        match recs.iter().position(|r| r.cos_dist > c.delta) {
            Some(t) if lo <= t as f64 && t as f64 <= hi => inside += 1,
            Some(t) => outside.push(format!("config {i}: T = {t} outside [{lo:.1}, {hi:.1}]")),
            None => outside.push(format!("config {i}: no jump within {steps} steps")),
        }
    }
    s.check(
        "first jump bracketed by t_min and t_max",
        inside == 50,
        format!("{inside}/50 trials bracketed"),
        outside.first().cloned(),
    );

    if let Some(b) = s.guard("worked example", jumps::jump_time_bounds(5.0, 0.01, 0.001, 0.5, 1.0, 1e-5)) {
        let oracle = t_min_oracle(5.0, 0.01, 0.001, 0.5, 1.0, 1e-5);
        let t = b.t_min.value.unwrap_or(f64::NAN);
        s.check(
            "worked t_min example",
            (t - oracle as f64).abs() <= 1.0,
            format!("t_min = {t:.2}, iterated crossing at {oracle}"),
            Some(format!("{t}")),
        );
    }

    let grid = [0.0125, 0.025, 0.05];
    let mut entries = Vec::new();
    let mut exits = Vec::new();
    for &el in &grid {
        let (eta, lambda, ell, big_l) = band_setting(el);
        let Some(band) = s.guard("band", jumps::equilibrium_band(eta, lambda, ell, big_l)) else {
            return s;
        };
        let mut sum = 0.0;
        for seed in 0..20u64 {
            let g = jumps::uniform_gradients(ell, big_l, 110_000, seed);
            let seq = beta_seq::norm_sequence(eta, lambda, 50.0, &g);
            match seq.iter().position(|&x| band.exact_contains(x)) {
                Some(e) => {
                    sum += e as f64;
                    let end = (e + 100_000).min(seq.len() - 1);
                    if let Some(k) = (e..=end).find(|&k| !band.exact_contains(seq[k])) {
                        exits.push(format!("eta*lambda {el} seed {seed}: exit at step {k}"));
                    }
                }
                None => exits.push(format!("eta*lambda {el} seed {seed}: never entered")),
            }
        }
        entries.push(sum / 20.0);
    }
    s.check(
        "band absorbs for 1e5 steps",
        exits.is_empty(),
        format!("{} exits over 3 x 20 runs", exits.len()),
        exits.first().cloned(),
    );
    let ratios: Vec<f64> = entries.windows(2).map(|w| w[0] / w[1]).collect();
    let ok = entries.windows(2).all(|w| w[1] < w[0]) && ratios.iter().all(|r| (r / 2.0 - 1.0).abs() <= 0.3);
    s.check(
        "entry time scales as 1/(eta*lambda)",
        ok,
        format!("mean entry {entries:.1?}, successive ratios {ratios:.3?} (expect 2 +/- 30%)"),
        Some(format!("{ratios:?}")),
    );
    s
}

fn beta_seq_suite() -> Suite {
    let mut s = Suite::new("beta-seq");
    let grid = beta_seq::gamma_grid(10_000, 2.0);
    for alpha in [0.05, 0.1, 0.25, 0.4] {
        if let Some(r) = s.guard("gamma properties", beta_seq::check_gamma_properties(alpha, &grid)) {
            let bad = r.checks.iter().find(|c| !c.passed);
            s.check(
                &format!("gamma-map properties, alpha = {alpha}"),
                r.all_passed(),
                format!("{} properties on {} grid points", r.checks.len(), r.grid_points),
                bad.map(|c| format!("{} at gamma = {:?}", c.name, c.witness)),
            );
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xbe7a);
    let mut det_ok = 0;
    let mut det_bad = None;
    for i in 0..100 {
        let alpha = rng.random_range(0.01..0.45);
        let beta = 10f64.powf(rng.random_range(-2.0..2.0));
        let star = (beta / alpha).sqrt();
        let x0 = star * (1.0 + 10f64.powf(rng.random_range(-3.0..1.0)));
        let p = BetaDetParams { alpha, beta, x0 };
        match beta_seq::det_convergence_bounds(&p, 1000) {
            Ok(r) if r.holds => det_ok += 1,
            Ok(r) => det_bad = det_bad.or(Some(format!("trial {i} {p:?}: step {:?}", r.first_violation))),
            Err(e) => det_bad = det_bad.or(Some(format!("trial {i}: {e}"))),
        }
    }
    s.check(
        "determined-sequence sandwich",
        det_ok == 100,
        format!("{det_ok}/100 randomized runs"),
        det_bad,
    );

    let mut sandwich_ok = 0;
    let mut absorbed_ok = 0;
    let mut sandwich_bad = None;
    let mut absorbed_bad = None;
    for i in 0..100u64 {
        let alpha: f64 = rng.random_range(0.01..0.3);
        let b = 10f64.powf(rng.random_range(-1.0..2.0));
        let r2 = (alpha / (1.0 - alpha)).powi(2);
        let a = b * rng.random_range((r2 * 1.01).max(0.05)..1.0);
        let x0 = (b / alpha).sqrt() * rng.random_range(1.1..5.0);
        let steps = (40.0 / alpha) as usize + 200;
        let mut all_sandwich = true;
        let mut all_absorbed = true;
        for sampler in [BetaSampler::Uniform, BetaSampler::AdversarialExtremes] {
            let p = BetaUndetParams { alpha, a, b, sampler, x0, seed: i };
            match beta_seq::undet_bounding_runs(&p, steps) {
                Ok(r) if r.holds() => {}
                Ok(r) => {
                    all_sandwich = false;
                    sandwich_bad = sandwich_bad.or(Some(format!(
                        "trial {i} {:?}: lower {:?} upper {:?}",
                        p.sampler, r.lower_first_violation, r.upper_first_violation
                    )));
                }
                Err(e) => {
                    all_sandwich = false;
                    sandwich_bad = sandwich_bad.or(Some(format!("trial {i}: {e}")));
                }
            }
            match beta_seq::interval_convergence(&p, steps) {
                Ok(r) if r.absorbed() => {}
                Ok(r) => {
                    all_absorbed = false;
                    absorbed_bad = absorbed_bad.or(Some(format!(
                        "trial {i} {:?}: entry {:?}, exits {}, envelope violations {}",
                        p.sampler, r.entry_time, r.exits_after_entry, r.envelope_violations
                    )));
                }
                Err(e) => {
                    all_absorbed = false;
                    absorbed_bad = absorbed_bad.or(Some(format!("trial {i}: {e}")));
                }
            }
        }
        sandwich_ok += all_sandwich as usize;
        absorbed_ok += all_absorbed as usize;
    }
    s.check(
        "undetermined-sequence sandwich",
        sandwich_ok == 100,
        format!("{sandwich_ok}/100 trials (uniform and adversarial samplers)"),
        sandwich_bad,
    );
    s.check(
        "interval absorption",
        absorbed_ok == 100,
        format!("{absorbed_ok}/100 trials (uniform and adversarial samplers)"),
        absorbed_bad,
    );

    let mut fig_ok = true;
    let mut detail = String::new();
    for sampler in [BetaSampler::Uniform, BetaSampler::AdversarialExtremes] {
        let p = BetaUndetParams { alpha: 0.1, a: 1.0, b: 10.0, sampler, x0: 20.0, seed: 3 };
        match beta_seq::interval_convergence(&p, 10_000) {
            Ok(r) => {
                fig_ok &= r.absorbed();
                detail.push_str(&format!("{:?}: entry {:?}, exits {}; ", p.sampler, r.entry_time, r.exits_after_entry));
            }
            Err(e) => {
                fig_ok = false;
                detail.push_str(&format!("{e}; "));
            }
        }
    }
    s.check(
        "alpha = 0.1, [a, b] = [1, 10] converges into [sqrt 10, 10]",
        fig_ok,
        detail.trim_end_matches("; ").to_string(),
        None,
    );
    s
}

fn rescaling() -> Suite {
    let mut s = Suite::new("rescaling");
    let cfg = OptimizerConfig::gd(1.0, 0.01, 300);
    for c in [0.5, 2.0, 10.0] {
        if let Some(r) = s.guard("rescaled run", dynamics::rescaled_equivalence(&ToyRational, &cfg, &TOY_X0, c, 300)) {
            let worst = r.per_step.iter().position(|d| *d > 1e-8);
            s.check(
                &format!("c = {c}"),
                !r.truncated && r.compared_steps >= 200 && r.max_deviation <= 1e-8 && r.max_iterate_deviation <= 1e-8,
                format!(
                    "{} steps, max f deviation {:.2e}, max iterate deviation {:.2e}",
                    r.compared_steps, r.max_deviation, r.max_iterate_deviation
                ),
                Some(worst.map_or_else(|| "iterate deviation".into(), |t| format!("step {t}"))),
            );
        }
    }
    s
}

/// Phase spans are contiguous, ordered A, B, C, and tile the period.
pub fn phases_ordered(p: &phases::PeriodSummary) -> bool {
    let order: Vec<Phase> = p.phases.iter().map(|s| s.phase).collect();
    let shape = order == [Phase::A, Phase::B, Phase::C] || order == [Phase::B, Phase::C];
    let tiled = p.phases.first().map(|s| s.start) == Some(p.start)
        && p.phases.last().map(|s| s.end) == Some(p.end)
        && p.phases.windows(2).all(|w| w[1].start == w[0].end + 1);
    shape && tiled
}

fn projected_jumps(obj: &dyn Objective, cfg: &OptimizerConfig, x0: &[f64], target: f64, delta: f64) -> Result<(usize, usize, f64)> {
    let c = cfg.clone().with_family(Family::SphereProjected { target_norm: Some(target) });
    let t = dynamics::run(obj, &c, x0)?;
    let transient = cfg.steps / 10;
    let seg = phases::segment_phases(&t.records, &SegmentOptions::new(delta));
    let late = seg.jumps.iter().filter(|j| j.step >= transient).count();
    let max_cd = t.records.iter().skip(transient).map(|r| r.cos_dist).fold(0.0, f64::max);
    Ok((late, seg.periods_after(transient).count(), max_cd))
}

fn periodicity() -> Suite {
    let mut s = Suite::new("periodicity");
    let Some(traj) = s.guard("toy run", toy_run(1.0, 0.01, 20_000)) else {
        return s;
    };
    let seg = phases::segment_phases(&traj.records, &SegmentOptions::new(TOY_DELTA));
    let classified = seg.classified().count();
    let unordered = seg.classified().find(|p| !phases_ordered(p)).map(|p| p.index);
    s.check(
        "toy periods at eta = 1, lambda = 0.01",
        classified == TOY_PERIODS && seg.periods.len() == TOY_PERIODS,
        format!("{} periods, {classified} classified (pinned {TOY_PERIODS})", seg.periods.len()),
        Some(format!("{classified}")),
    );
    s.check(
        "A, B, C ordering",
        unordered.is_none() && classified >= 3,
        format!("{classified} periods checked"),
        unordered.map(|i| format!("period {i}")),
    );

    if let Some(z) = s.guard("lambda = 0 run", toy_run(1.0, 0.0, 20_000)) {
        let bad = z.records.windows(2).skip(1).find(|w| w[1].eff_lr > w[0].eff_lr).map(|w| w[1].step);
        let final_loss = z.records.last().map_or(f64::NAN, |r| r.loss);
        s.check(
            "no decay: effective lr non-increasing, loss below 1e-6",
            bad.is_none() && final_loss < 1e-6,
            format!("final loss {final_loss:.2e}"),
            bad.map(|t| format!("step {t}")),
        );
        let n = jumps::detect_jumps(&z.records, TOY_DELTA).len();
        s.check("no decay: no jumps", n == 0, format!("{n} jumps"), None);
    }

    let runs: Vec<Result<Trajectory>> = [0.005, 0.01, 0.02].iter().map(|&l| toy_run(1.0, l, 20_000)).collect();
    if let Some(runs) = s.guard("frequency runs", runs.into_iter().collect::<Result<Vec<_>>>()) {
        let refs: Vec<&Trajectory> = runs.iter().collect();
        let report = phases::period_frequency_report(&refs, TOY_DELTA, 2000);
        let means: Vec<Option<f64>> = report.rows.iter().map(|r| r.mean_period).collect();
        s.check(
            "period length decreases with eta*lambda",
            report.strictly_decreasing == Some(true),
            format!("mean periods {means:.2?}"),
            Some(format!("{means:?}")),
        );
    }

    if let Some(p) = seg.classified().nth(10) {
        let b = p.span(Phase::B).expect("classified");
        for family in [EnvelopeFamily::Const, EnvelopeFamily::Inverse, EnvelopeFamily::InverseSquare] {
            if let Some(bounds) = s.guard("envelope fit", envelope::fit_envelopes(&traj.records, (b.start, b.end), family)) {
                let rows = envelope::delta_overlay(&traj.records, &bounds, 1.0, 0.01, OverlayForm::Exact);
                let bad = rows.iter().find(|r| !r.sandwiched());
                s.check(
                    &format!("{family:?} envelopes sandwich cos_dist"),
                    bad.is_none() && !rows.is_empty() && bounds.violations(&traj.records).is_empty(),
                    format!("{}/{} window steps", rows.iter().filter(|r| r.sandwiched()).count(), rows.len()),
                    bad.map(|r| format!("step {}", r.step)),
                );
            }
        }
    } else {
        s.check("envelope window", false, "fewer than 11 classified periods".into(), None);
    }

    let cfg = OptimizerConfig::gd(1.0, 0.01, 20_000);
    let rho0 = vector::norm(&TOY_X0);
    let peak = traj.records.iter().map(|r| r.rho).fold(0.0, f64::max);
    for (label, target) in [("initial", rho0), ("peak", peak)] {
        if let Some((late, periods, max_cd)) =
            s.guard("projected run", projected_jumps(&ToyRational, &cfg, &TOY_X0, target, TOY_DELTA))
        {
            s.check(
                &format!("sphere-projected toy at the {label} norm has no periods"),
                late == 0 && periods == 0,
                format!("norm {target:.4}: {late} jumps after transient, max cos_dist {max_cd:.2e}"),
                Some(format!("{late} jumps")),
            );
        }
    }
    s
}

fn certification() -> Suite {
    let mut s = Suite::new("certification");
    for (name, r) in [
        ("toy orthogonality", certify::certify_orthogonality(&ToyRational, 200, 1, CLOSED_FORM_TOL)),
        (
            "toy inverse homogeneity",
            certify::certify_inverse_homogeneity(&ToyRational, &[0.5, 2.0, 10.0], 200, 2, CLOSED_FORM_TOL),
        ),
    ] {
        if let Some(r) = s.guard(name, r) {
            s.check(name, r.passed, format!("max deviation {:.2e} (tol 1e-12)", r.max_deviation), Some(format!("{:?}", r.witness)));
        }
    }
    let net = sinet::preset(SINET_PRESET).ok_or_else(|| Error::Config("missing preset".into())).and_then(|p| p.build());
    let Some(net) = s.guard("build net", net) else {
        return s;
    };
    net_certification(&mut s, &net);
    s
}

fn net_certification(s: &mut Suite, net: &SiNet) {
    for (name, r) in [
        ("net orthogonality", certify::certify_orthogonality(net, 20, 3, NETWORK_TOL)),
        ("net inverse homogeneity", certify::certify_inverse_homogeneity(net, &[0.5, 2.0, 10.0], 20, 4, NETWORK_TOL)),
    ] {
        if let Some(r) = s.guard(name, r) {
            s.check(name, r.passed, format!("max deviation {:.2e} (tol 1e-6)", r.max_deviation), Some(format!("{:.3e}", r.max_deviation)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xfd);
    let dim = net.dim();
    let mut worst = 0.0f64;
    let mut bad = None;
    let mut points = vec![net.initial_point().to_vec()];
    points.push(certify::sample_point(&mut rng, dim));
    for (k, x) in points.iter().enumerate() {
        let coords: Vec<usize> = (0..32).map(|_| rng.random_range(0..dim)).collect();
        match certify::finite_difference_error(net, x, 1e-5, Some(&coords), Batch::Full) {
            Ok(e) => {
                worst = worst.max(e);
                if !(e < 1e-4) && bad.is_none() {
                    bad = Some(format!("point {k}: relative error {e:e}"));
                }
            }
            Err(e) => bad = bad.or(Some(format!("point {k}: {e}"))),
        }
    }
    s.check(
        "net gradient vs finite differences",
        bad.is_none(),
        format!("max relative error {worst:.2e} on 32 coordinates x {} points (h = 1e-5, tol 1e-4)", points.len()),
        bad,
    );
}

/// Everything the network study produces.
#[derive(Debug, Clone)]
pub struct NetStudy {
    pub output: sinet::TrainOutput,
    pub segmentation: Segmentation,
    /// `(norm, late jumps, late periods, max late cos_dist)` per twin.
    pub twins: Vec<(f64, usize, usize, f64)>,
    pub similarity: sinet::SimilarityStudy,
}

/// Trains the pinned network, its two sphere-projected twins (initial norm
/// and the norm at the start of the third period's phase B) and runs the
/// similarity study.
pub fn net_study() -> Result<NetStudy> {
    let net = sinet::preset(SINET_PRESET).ok_or_else(|| Error::Config("missing preset".into()))?.build()?;
    let cfg = sinet_config();
    let cps: Vec<usize> = (0..=cfg.steps).step_by(SINET_CHECKPOINT_EVERY).collect();
    let x0 = net.initial_point().to_vec();
    let rho0 = vector::norm(&x0);
    let (output, twin0) = rayon::join(
        || sinet::train(&net, &cfg, &x0, &cps, 500),
        || projected_jumps(&net, &cfg, &x0, rho0, SINET_DELTA),
    );
    let output = output?;
    let twin0 = twin0?;
    let segmentation = phases::segment_phases(&output.trajectory.records, &SegmentOptions::new(SINET_DELTA));
    let pre = segmentation
        .classified()
        .nth(2)
        .and_then(|p| p.span(Phase::B))
        .ok_or_else(|| Error::Config("network run has fewer than 3 classified periods".into()))?;
    let rho_pre = output.trajectory.records[pre.start].rho;
    let (twin1, similarity) = rayon::join(
        || projected_jumps(&net, &cfg, &x0, rho_pre, SINET_DELTA),
        || sinet::similarity_study(&net, &output.checkpoints, &segmentation),
    );
    let twin1 = twin1?;
    Ok(NetStudy {
        twins: vec![(rho0, twin0.0, twin0.1, twin0.2), (rho_pre, twin1.0, twin1.1, twin1.2)],
        similarity: similarity?,
        output,
        segmentation,
    })
}

fn sinet_suite() -> Suite {
    let mut s = Suite::new("si-net");
    let Some(study) = s.guard("network study", net_study()) else {
        return s;
    };
    let traj = &study.output.trajectory;
    let cf = traj.closed_form.clone().unwrap_or_default();
    s.check(
        "closed forms hold on the network",
        cf.passed() && cf.checked_steps == traj.records.len(),
        format!("max norm error {:.2e} over {} steps", cf.max_norm_rel_err, cf.checked_steps),
        cf.first_violation.map(|t| format!("step {t}")),
    );
    let periods = study.segmentation.classified().count();
    s.check(
        "at least 2 complete periods",
        periods >= 2,
        format!(
            "{periods} classified periods, jumps at {:?}",
            study.segmentation.jumps.iter().map(|j| j.step).collect::<Vec<_>>()
        ),
        None,
    );
    for (norm, late, p, max_cd) in &study.twins {
        s.check(
            &format!("projected twin at norm {norm:.3} has no periods"),
            *late == 0 && *p == 0,
            format!("{late} jumps and {p} periods after the transient, max cos_dist {max_cd:.2e}"),
            Some(format!("{late} jumps")),
        );
    }
    let sim = &study.similarity;
    let n = sim.anchors.len();
    s.check(
        "within-period similarity exceeds cross-period",
        n >= 3 && sim.median_gap > 0.0 && sim.sign_test_p < 0.05,
        format!(
            "{}/{n} anchors with positive gap, median gap {:.3}, sign test p = {:.2e}",
            sim.positive_gaps, sim.median_gap, sim.sign_test_p
        ),
        None,
    );
    s.check(
        "cross-period ensemble no worse than the anchor",
        sim.pooled_ensemble_delta <= 0.0,
        format!(
            "pooled median ensemble - single = {:.4}; per-anchor medians no worse in {}/{n}",
            sim.pooled_ensemble_delta,
            sim.anchors.iter().filter(|a| a.ensemble_median <= a.single_err).count()
        ),
        None,
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flipped(rho_sq: f64, eta: f64, lambda: f64, g: f64) -> f64 {
        let shrink = 1.0 - eta * lambda;
        shrink * shrink * rho_sq - eta * eta * g * g / rho_sq
    }

    #[test]
    fn closed_forms_pass() {
        let r = verify("closed-forms").unwrap();
        assert!(r.passed, "{}", r.to_text());
    }

    #[test]
    fn flipped_sign_is_caught_with_a_witness() {
        let r = verify_with("closed-forms", &VerifyOptions { norm_model: flipped }).unwrap();
        assert!(!r.passed);
        let bad = r.suites[0].failed_checks().next().unwrap();
        assert_eq!(bad.name, "norm recursion");
        assert!(bad.witness.as_deref().unwrap().starts_with("step 0"), "{bad:?}");
    }

    #[test]
    fn unknown_suite_is_an_error() {
        assert!(verify("nonsense").is_err());
    }

    #[test]
    fn oracle_matches_worked_example() {
        assert_eq!(t_min_oracle(5.0, 0.01, 0.001, 0.5, 1.0, 1e-5), 31119);
    }
}
