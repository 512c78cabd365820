//! Config-driven experiment runs and sweeps.
//!
//! An experiment is one TOML file:
//!
//! ```toml
//! name = "toy-periods"
//! objective = "toy-rational"
//! x0 = [0.01, 1.0]
//! seed = 0
//!
//! [optimizer]
//! family = "gd"
//! eta = 1.0
//! lambda = 0.01
//! steps = 20000
//!
//! [sweep]
//! lambda = [0.0, 0.01]
//!
//! [analysis]
//! deltas = [0.01]
//! ```
//!
//! Each sweep point gets its own directory with `trace.csv`, `events.json`
//! and `manifest.json`; the sweep root holds `sweep.json` and the summary.

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, BatchSize, Family, OptimizerConfig, RunOptions, Trajectory, DEFAULT_ADAM, DEFAULT_MOMENTUM};
use crate::error::{Error, Result};
use crate::io::{self, ArtifactRef};
use crate::jumps::{self, JumpEvent, LARGE_DELTA, TOY_DELTA};
use crate::objective::ToyRational;
use crate::phases::{self, FrequencyReport, Segmentation, SegmentOptions};
use crate::registry::Registry;
use crate::sinet;
use crate::vector;

pub const OUTPUT_ROOT_ENV: &str = "SIDYN_OUTPUT_ROOT";
pub const MANIFEST: &str = "manifest.json";
pub const SWEEP_MANIFEST: &str = "sweep.json";

/// Largest x0 stored inline in a manifest; longer ones are stored as a hash.
const INLINE_X0: usize = 64;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: String,
    objective: String,
    #[serde(default)]
    x0: Option<Vec<f64>>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    output: Option<String>,
    optimizer: RawOptimizer,
    #[serde(default)]
    sweep: Option<RawSweep>,
    #[serde(default)]
    analysis: RawAnalysis,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptimizer {
    #[serde(default = "default_family")]
    family: String,
    eta: f64,
    #[serde(default)]
    lambda: f64,
    steps: usize,
    #[serde(default)]
    batch: Option<toml::Value>,
    #[serde(default)]
    momentum: Option<f64>,
    #[serde(default)]
    beta1: Option<f64>,
    #[serde(default)]
    beta2: Option<f64>,
    #[serde(default)]
    eps: Option<f64>,
    #[serde(default)]
    target_norm: Option<f64>,
    #[serde(default)]
    coupled_l2: bool,
}

fn default_family() -> String {
    "gd".into()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    #[serde(default)]
    eta: Option<Vec<f64>>,
    #[serde(default)]
    lambda: Option<Vec<f64>>,
    #[serde(default)]
    product: Option<f64>,
    #[serde(default)]
    etas: Option<Vec<f64>>,
    #[serde(default)]
    rescale_init: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnalysis {
    #[serde(default)]
    deltas: Option<Vec<f64>>,
    #[serde(default)]
    checkpoints: Option<Vec<usize>>,
    #[serde(default)]
    checkpoint_every: Option<usize>,
    #[serde(default)]
    trace_stride: Option<usize>,
    #[serde(default)]
    eval_every: Option<usize>,
    #[serde(default)]
    transient: Option<f64>,
}

/// How the sweep points were generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SweepKind {
    Single,
    Grid,
    /// Fixed `ηλ`; with `rescale_init` the starting point of each point is
    /// `sqrt(η/η₀)·x₀`, which makes all points the same function-space run.
    FixedProduct { product: f64, rescale_init: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub eta: f64,
    pub lambda: f64,
    /// Multiplier applied to the base x0.
    pub init_scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub deltas: Vec<f64>,
    pub checkpoints: Vec<usize>,
    pub trace_stride: usize,
    pub eval_every: usize,
    /// Fraction of the step budget skipped by the frequency report.
    pub transient: f64,
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub objective: String,
    pub x0: Option<Vec<f64>>,
    pub seed: u64,
    pub output: PathBuf,
    pub optimizer: OptimizerConfig,
    pub sweep: SweepKind,
    pub points: Vec<SweepPoint>,
    pub analysis: AnalysisConfig,
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, col)
}

/// Line of `key = ...` inside `[table]` (or the root when `table` is empty).
fn key_line(text: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if current == table {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

struct Diag<'a> {
    origin: &'a str,
    text: &'a str,
}

impl Diag<'_> {
    fn at(&self, table: &str, key: &str, msg: impl std::fmt::Display) -> Error {
        match key_line(self.text, table, key) {
            Some(line) => Error::Config(format!("{}:{line}: {msg}", self.origin)),
            None => Error::Config(format!("{}: {msg}", self.origin)),
        }
    }
}

fn family_from(raw: &RawOptimizer, d: &Diag) -> Result<Family> {
    let family = match raw.family.as_str() {
        "gd" => Family::Gd,
        "sgd" => Family::Sgd,
        "sgd-momentum" | "momentum" => Family::SgdMomentum { mu: raw.momentum.unwrap_or(DEFAULT_MOMENTUM) },
        "adam" => Family::Adam {
            beta1: raw.beta1.unwrap_or(DEFAULT_ADAM.0),
            beta2: raw.beta2.unwrap_or(DEFAULT_ADAM.1),
            eps: raw.eps.unwrap_or(DEFAULT_ADAM.2),
        },
        "sphere-projected" => Family::SphereProjected { target_norm: raw.target_norm },
        other => {
            return Err(d.at(
                "optimizer",
                "family",
                format!("unknown family {other:?} (gd, sgd, sgd-momentum, adam, sphere-projected)"),
            ))
        }
    };
    Ok(family)
}

fn batch_from(raw: &Option<toml::Value>, d: &Diag) -> Result<BatchSize> {
    match raw {
        None => Ok(BatchSize::Full),
        Some(toml::Value::String(s)) if s == "full" => Ok(BatchSize::Full),
        Some(toml::Value::Integer(n)) if *n > 0 => Ok(BatchSize::Size(*n as usize)),
        Some(v) => Err(d.at("optimizer", "batch", format!("batch must be \"full\" or a positive integer, got {v}"))),
    }
}

fn non_empty(axis: &Option<Vec<f64>>, key: &str, d: &Diag) -> Result<Option<Vec<f64>>> {
    match axis {
        Some(v) if v.is_empty() => Err(d.at("sweep", key, format!("sweep axis `{key}` is empty"))),
        other => Ok(other.clone()),
    }
}

fn point_seed(global: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(global);
    rng.set_stream(index as u64);
    rng.next_u64()
}

impl ExperimentConfig {
    /// Parses and validates a config. `origin` names the source in
    /// diagnostics, which take the form `origin:line: message`.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    Error::Config(format!("{origin}:{line}:{col}: {msg}"))
                }
                None => Error::Config(format!("{origin}: {msg}")),
            }
        })?;
        let d = Diag { origin, text };

        if raw.name.trim().is_empty() || raw.name.contains(['/', '\\']) {
            return Err(d.at("", "name", "name must be a non-empty string without path separators"));
        }
        let optimizer = OptimizerConfig {
            eta: raw.optimizer.eta,
            lambda: raw.optimizer.lambda,
            family: family_from(&raw.optimizer, &d)?,
            steps: raw.optimizer.steps,
            batch: batch_from(&raw.optimizer.batch, &d)?,
            seed: raw.seed,
            coupled_l2: raw.optimizer.coupled_l2,
        };
        if optimizer.steps == 0 {
            return Err(d.at("optimizer", "steps", "steps must be positive"));
        }
        optimizer.validate().map_err(|e| d.at("optimizer", "eta", e))?;

        let (sweep, pairs): (SweepKind, Vec<(f64, f64, f64)>) = match &raw.sweep {
            None => (SweepKind::Single, vec![(optimizer.eta, optimizer.lambda, 1.0)]),
            Some(s) => {
                let eta = non_empty(&s.eta, "eta", &d)?;
                let lambda = non_empty(&s.lambda, "lambda", &d)?;
                let etas = non_empty(&s.etas, "etas", &d)?;
                match (s.product, etas) {
                    (Some(product), Some(etas)) => {
                        if eta.is_some() || lambda.is_some() {
                            return Err(d.at("sweep", "product", "`product` sweeps cannot be combined with eta/lambda axes"));
                        }
                        if !(product > 0.0 && product < 0.5) {
                            return Err(d.at("sweep", "product", format!("product must lie in (0, 0.5), got {product}")));
                        }
                        let eta0 = etas[0];
                        let pairs = etas
                            .iter()
                            .map(|&e| {
                                let scale = if s.rescale_init { (e / eta0).sqrt() } else { 1.0 };
                                (e, product / e, scale)
                            })
                            .collect();
                        (SweepKind::FixedProduct { product, rescale_init: s.rescale_init }, pairs)
                    }
                    (Some(_), None) => return Err(d.at("sweep", "product", "`product` needs an `etas` list")),
                    (None, Some(_)) => return Err(d.at("sweep", "etas", "`etas` needs a `product`")),
                    (None, None) => {
                        if eta.is_none() && lambda.is_none() {
                            return Err(d.at("sweep", "eta", "[sweep] needs an axis (eta, lambda, or product + etas)"));
                        }
                        let etas = eta.unwrap_or_else(|| vec![optimizer.eta]);
                        let lambdas = lambda.unwrap_or_else(|| vec![optimizer.lambda]);
                        let pairs = etas
                            .iter()
                            .flat_map(|&e| lambdas.iter().map(move |&l| (e, l, 1.0)))
                            .collect();
                        (SweepKind::Grid, pairs)
                    }
                }
            }
        };
        let mut points = Vec::with_capacity(pairs.len());
        for (index, (eta, lambda, init_scale)) in pairs.into_iter().enumerate() {
            let mut cfg = optimizer.clone();
            cfg.eta = eta;
            cfg.lambda = lambda;
            cfg.validate()
                .map_err(|e| d.at("sweep", "eta", format!("sweep point {index} (eta={eta}, lambda={lambda}): {e}")))?;
            points.push(SweepPoint { index, eta, lambda, init_scale, seed: point_seed(raw.seed, index) });
        }

        let a = &raw.analysis;
        let default_delta = if raw.objective == ToyRational::ID { TOY_DELTA } else { LARGE_DELTA };
        let deltas = match &a.deltas {
            Some(v) if v.is_empty() => return Err(d.at("analysis", "deltas", "`deltas` is empty")),
            Some(v) => v.clone(),
            None => vec![default_delta],
        };
        if let Some(bad) = deltas.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
            return Err(d.at("analysis", "deltas", format!("delta must lie in (0, 1), got {bad}")));
        }
        let mut checkpoints = a.checkpoints.clone().unwrap_or_default();
        match a.checkpoint_every {
            Some(0) => return Err(d.at("analysis", "checkpoint_every", "checkpoint_every must be positive")),
            Some(k) => checkpoints.extend((0..=optimizer.steps).step_by(k)),
            None => {}
        }
        checkpoints.sort_unstable();
        checkpoints.dedup();
        if let Some(&c) = checkpoints.iter().find(|&&c| c > optimizer.steps) {
            return Err(d.at("analysis", "checkpoints", format!("checkpoint step {c} is past the step budget")));
        }
        let trace_stride = a.trace_stride.unwrap_or(1);
        if trace_stride == 0 {
            return Err(d.at("analysis", "trace_stride", "trace_stride must be positive"));
        }
        let eval_every = a.eval_every.unwrap_or(100);
        if eval_every == 0 {
            return Err(d.at("analysis", "eval_every", "eval_every must be positive"));
        }
        let transient = a.transient.unwrap_or(0.1);
        if !(0.0..1.0).contains(&transient) {
            return Err(d.at("analysis", "transient", "transient must lie in [0, 1)"));
        }
        if let Some(x0) = &raw.x0 {
            if x0.is_empty() || x0.iter().any(|v| !v.is_finite()) || vector::norm_sq(x0) == 0.0 {
                return Err(d.at("", "x0", "x0 must be a non-empty, finite, nonzero vector"));
            }
        }
        if Registry::known_ids().iter().all(|id| *id != raw.objective) {
            return Err(d.at(
                "",
                "objective",
                format!("unknown objective {:?}; known: {}", raw.objective, Registry::known_ids().join(", ")),
            ));
        }

        let output = PathBuf::from(raw.output.clone().unwrap_or_else(|| format!("runs/{}", raw.name)));
        Ok(ExperimentConfig {
            name: raw.name,
            objective: raw.objective,
            x0: raw.x0,
            seed: raw.seed,
            output,
            optimizer,
            sweep,
            points,
            analysis: AnalysisConfig { deltas, checkpoints, trace_stride, eval_every, transient },
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Output directory: `output` joined onto `root` when given, else as-is.
    pub fn output_dir(&self, root: Option<&Path>) -> PathBuf {
        match root {
            Some(r) => r.join(&self.output),
            None => self.output.clone(),
        }
    }

    pub fn point_config(&self, p: &SweepPoint) -> OptimizerConfig {
        let mut cfg = self.optimizer.clone();
        cfg.eta = p.eta;
        cfg.lambda = p.lambda;
        cfg.seed = p.seed;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEvents {
    pub delta: f64,
    pub jumps: Vec<JumpEvent>,
    pub segmentation: Segmentation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointManifest {
    pub experiment: String,
    pub point: SweepPoint,
    pub objective: String,
    pub dimension: usize,
    pub config: OptimizerConfig,
    /// Starting point, inline when short.
    pub x0: Option<Vec<f64>>,
    pub x0_hash: String,
    pub deltas: Vec<f64>,
    pub trace_stride: usize,
    pub steps_run: usize,
    pub truncated: bool,
    pub divergence: Option<dynamics::DivergenceReport>,
    pub closed_form: Option<dynamics::ClosedFormCheck>,
    pub files: Vec<ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub index: usize,
    pub dir: String,
    pub eta: f64,
    pub lambda: f64,
    pub eta_lambda: f64,
    pub steps_run: usize,
    pub truncated: bool,
    pub final_loss: Option<f64>,
    /// `(delta, jumps, classified periods)` per analysed delta.
    pub events: Vec<(f64, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDeviation {
    pub a: usize,
    pub b: usize,
    /// Largest `|f_a(t) - f_b(t)| / (1 + |f_a(t)|)`.
    pub max_deviation: f64,
    pub compared_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub name: String,
    pub points: Vec<PointSummary>,
    /// Period length against `ηλ` at the first delta (grid sweeps only).
    pub frequency: Option<FrequencyReport>,
    /// Pairwise loss agreement (fixed-product sweeps only).
    pub agreement: Vec<PairDeviation>,
}

impl SweepSummary {
    pub fn to_text(&self) -> String {
        let mut out = format!("experiment {}\n\n", self.name);
        out.push_str(&format!(
            "{:>5} {:>12} {:>12} {:>12} {:>8} {:>10} {:>14}  events (delta: jumps/periods)\n",
            "point", "eta", "lambda", "eta*lambda", "steps", "truncated", "final_loss"
        ));
        for p in &self.points {
            let loss = p.final_loss.map_or_else(|| "-".into(), |l| format!("{l:.6e}"));
            let events: Vec<String> = p.events.iter().map(|(d, j, c)| format!("{d}: {j}/{c}")).collect();
            out.push_str(&format!(
                "{:>5} {:>12.4e} {:>12.4e} {:>12.4e} {:>8} {:>10} {:>14}  {}\n",
                p.index,
                p.eta,
                p.lambda,
                p.eta_lambda,
                p.steps_run,
                p.truncated,
                loss,
                events.join(", ")
            ));
        }
        if let Some(f) = &self.frequency {
            out.push_str(&format!("\nperiod length vs eta*lambda (delta = {})\n", f.delta));
            out.push_str(&f.to_table());
            if let Some(dec) = f.strictly_decreasing {
                out.push_str(&format!("strictly decreasing: {dec}\n"));
            }
        }
        if !self.agreement.is_empty() {
            out.push_str("\npairwise loss agreement\n");
            for p in &self.agreement {
                out.push_str(&format!(
                    "  {} vs {}: max deviation {:.3e} over {} steps\n",
                    p.a, p.b, p.max_deviation, p.compared_steps
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub name: String,
    pub objective: String,
    pub seed: u64,
    pub sweep: SweepKind,
    pub config_hash: String,
    /// `config.toml`, `summary.json`, `summary.txt` and one manifest per point.
    pub files: Vec<ArtifactRef>,
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: SweepManifest,
    pub summary: SweepSummary,
    pub points: Vec<PointManifest>,
}

pub fn point_dir_name(index: usize) -> String {
    format!("point-{index:03}")
}

fn x0_bytes(x0: &[f64]) -> Vec<u8> {
    x0.iter().flat_map(|v| v.to_le_bytes()).collect()
}

struct PointResult {
    manifest: PointManifest,
    manifest_ref: ArtifactRef,
    summary: PointSummary,
    trajectory: Trajectory,
}

fn run_point(
    cfg: &ExperimentConfig,
    registry: &Registry,
    base_x0: &[f64],
    point: &SweepPoint,
    root: &Path,
) -> Result<PointResult> {
    let entry = registry.resolve(&cfg.objective)?;
    let opt = cfg.point_config(point);
    let x0 = vector::scaled(base_x0, point.init_scale);
    let dir_name = point_dir_name(point.index);
    let dir = root.join(&dir_name);
    io::create_dir(&dir)?;

    let mut files = Vec::new();
    let (trajectory, extra) = match &entry.net {
        Some(net) => {
            let out = sinet::train(net, &opt, &x0, &cfg.analysis.checkpoints, cfg.analysis.eval_every)?;
            let mut extra = vec![("epochs.json", io::to_json_bytes(&out.epochs)?)];
            if !out.checkpoints.is_empty() {
                extra.push(("checkpoints.json", io::to_json_bytes(&out.checkpoints)?));
            }
            (out.trajectory, extra)
        }
        None => {
            let options = RunOptions { checkpoint_steps: cfg.analysis.checkpoints.iter().copied().collect() };
            let traj = dynamics::run_with(entry.objective.as_ref(), &opt, &x0, &options, |_, _| {})?;
            let mut extra = Vec::new();
            if !traj.checkpoints.is_empty() {
                extra.push(("checkpoints.json", io::to_json_bytes(&traj.checkpoints)?));
            }
            (traj, extra)
        }
    };

    let stride = cfg.analysis.trace_stride;
    let kept: Vec<_> = trajectory.records.iter().filter(|r| r.step % stride == 0).cloned().collect();
    files.push(io::write_artifact(&dir, "trace.csv", io::trace_csv(&kept).as_bytes())?);

    let events: Vec<DeltaEvents> = cfg
        .analysis
        .deltas
        .iter()
        .map(|&delta| {
            let segmentation = phases::segment_phases(&trajectory.records, &SegmentOptions::new(delta));
            DeltaEvents { delta, jumps: jumps::detect_jumps(&trajectory.records, delta), segmentation }
        })
        .collect();
    files.push(io::write_artifact(&dir, "events.json", &io::to_json_bytes(&events)?)?);
    for (name, bytes) in extra {
        files.push(io::write_artifact(&dir, name, &bytes)?);
    }

    let manifest = PointManifest {
        experiment: cfg.name.clone(),
        point: point.clone(),
        objective: cfg.objective.clone(),
        dimension: x0.len(),
        config: opt,
        x0: (x0.len() <= INLINE_X0).then(|| x0.clone()),
        x0_hash: io::content_hash(&x0_bytes(&x0)),
        deltas: cfg.analysis.deltas.clone(),
        trace_stride: stride,
        steps_run: trajectory.records.len(),
        truncated: trajectory.truncated,
        divergence: trajectory.divergence.clone(),
        closed_form: trajectory.closed_form.clone(),
        files,
    };
    let manifest_ref = io::write_artifact(root, &format!("{dir_name}/{MANIFEST}"), &io::to_json_bytes(&manifest)?)?;
    let summary = PointSummary {
        index: point.index,
        dir: dir_name,
        eta: point.eta,
        lambda: point.lambda,
        eta_lambda: point.eta * point.lambda,
        steps_run: manifest.steps_run,
        truncated: manifest.truncated,
        final_loss: trajectory.records.last().map(|r| r.loss),
        events: events
            .iter()
            .map(|e| (e.delta, e.jumps.len(), e.segmentation.classified().count()))
            .collect(),
    };
    Ok(PointResult { manifest, manifest_ref, summary, trajectory })
}

fn pairwise_agreement(trajs: &[&Trajectory]) -> Vec<PairDeviation> {
    let mut out = Vec::new();
    for i in 0..trajs.len() {
        for j in i + 1..trajs.len() {
            let (a, b) = (&trajs[i].records, &trajs[j].records);
            let n = a.len().min(b.len());
            let max_deviation = a[..n]
                .iter()
                .zip(&b[..n])
                .map(|(ra, rb)| (ra.loss - rb.loss).abs() / (1.0 + ra.loss.abs()))
                .fold(0.0, f64::max);
            out.push(PairDeviation { a: i, b: j, max_deviation, compared_steps: n });
        }
    }
    out
}

/// Runs every sweep point in parallel and writes all artifacts under
/// `cfg.output_dir(output_root)`. `config_text` is stored verbatim.
///
/// Diverging points are recorded as truncated; they never fail the run.
pub fn run_experiment(cfg: &ExperimentConfig, config_text: &str, output_root: Option<&Path>) -> Result<RunOutcome> {
    let registry = Registry::new();
    let entry = registry.resolve(&cfg.objective)?;
    let base_x0 = match (&cfg.x0, &entry.default_x0) {
        (Some(x), _) => x.clone(),
        (None, Some(x)) => x.clone(),
        (None, None) => return Err(Error::Config(format!("objective {} needs an explicit x0", cfg.objective))),
    };
    if base_x0.len() != entry.objective.dim() {
        return Err(Error::Config(format!(
            "x0 has {} coordinates but {} expects {}",
            base_x0.len(),
            cfg.objective,
            entry.objective.dim()
        )));
    }
    let root = cfg.output_dir(output_root);
    io::create_dir(&root)?;

    let results: Vec<PointResult> = cfg
        .points
        .par_iter()
        .map(|p| run_point(cfg, &registry, &base_x0, p, &root))
        .collect::<Result<_>>()?;

    let trajs: Vec<&Trajectory> = results.iter().map(|r| &r.trajectory).collect();
    let transient = (cfg.analysis.transient * cfg.optimizer.steps as f64) as usize;
    let frequency = match cfg.sweep {
        SweepKind::Grid if trajs.len() >= 2 => {
            Some(phases::period_frequency_report(&trajs, cfg.analysis.deltas[0], transient))
        }
        _ => None,
    };
    let agreement = match cfg.sweep {
        SweepKind::FixedProduct { .. } => pairwise_agreement(&trajs),
        _ => Vec::new(),
    };
    let summary = SweepSummary {
        name: cfg.name.clone(),
        points: results.iter().map(|r| r.summary.clone()).collect(),
        frequency,
        agreement,
    };

    let mut files = vec![io::write_artifact(&root, "config.toml", config_text.as_bytes())?];
    files.push(io::write_artifact(&root, "summary.json", &io::to_json_bytes(&summary)?)?);
    files.push(io::write_artifact(&root, "summary.txt", summary.to_text().as_bytes())?);
    files.extend(results.iter().map(|r| r.manifest_ref.clone()));
    let manifest = SweepManifest {
        name: cfg.name.clone(),
        objective: cfg.objective.clone(),
        seed: cfg.seed,
        sweep: cfg.sweep.clone(),
        config_hash: io::content_hash(config_text.as_bytes()),
        files,
    };
    io::write_artifact(&root, SWEEP_MANIFEST, &io::to_json_bytes(&manifest)?)?;
    Ok(RunOutcome {
        dir: root,
        manifest,
        summary,
        points: results.into_iter().map(|r| r.manifest).collect(),
    })
}

/// Hash check of one artifact directory (a sweep root or a single point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrityReport {
    pub checked: usize,
    pub mismatches: Vec<io::HashMismatch>,
}

impl IntegrityReport {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Re-hashes every file referenced by the manifests under `dir`, following
/// the sweep manifest into point manifests.
pub fn check_integrity(dir: &Path) -> Result<IntegrityReport> {
    let mut report = IntegrityReport { checked: 0, mismatches: Vec::new() };
    let sweep_path = dir.join(SWEEP_MANIFEST);
    let point_manifests: Vec<PathBuf> = if sweep_path.exists() {
        let sweep: SweepManifest = io::read_json(&sweep_path)?;
        for f in &sweep.files {
            report.checked += 1;
            if let Some(m) = io::check_artifact(dir, f)? {
                report.mismatches.push(m);
            }
        }
        sweep
            .files
            .iter()
            .filter(|f| f.path.ends_with(MANIFEST))
            .map(|f| dir.join(&f.path))
            .filter(|p| p.exists())
            .collect()
    } else {
        vec![dir.join(MANIFEST)]
    };
    for mpath in point_manifests {
        let m: PointManifest = io::read_json(&mpath)?;
        let pdir = mpath.parent().unwrap_or(dir);
        for f in &m.files {
            report.checked += 1;
            if let Some(mm) = io::check_artifact(pdir, f)? {
                report.mismatches.push(mm);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"
name = "t"
objective = "toy-rational"
x0 = [0.01, 1.0]

[optimizer]
eta = 1.0
lambda = 0.01
steps = 300

[sweep]
lambda = [0.0, 0.01]
"#;

    #[test]
    fn parses_grid() {
        let cfg = ExperimentConfig::parse(TOY, "t.toml").unwrap();
        assert_eq!(cfg.points.len(), 2);
        assert_eq!(cfg.sweep, SweepKind::Grid);
        assert_eq!(cfg.analysis.deltas, vec![TOY_DELTA]);
        assert_eq!(cfg.output, PathBuf::from("runs/t"));
        assert_ne!(cfg.points[0].seed, cfg.points[1].seed);
    }

    #[test]
    fn empty_axis_points_at_its_line() {
        let text = TOY.replace("lambda = [0.0, 0.01]", "lambda = []");
        let err = ExperimentConfig::parse(&text, "t.toml").unwrap_err().to_string();
        assert!(err.contains("t.toml:12:"), "{err}");
        assert!(err.contains("empty"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_line_and_column() {
        let text = TOY.replace("steps = 300", "steps = = 300");
        let err = ExperimentConfig::parse(&text, "t.toml").unwrap_err().to_string();
        assert!(err.contains("t.toml:9:9:"), "{err}");
    }

    #[test]
    fn rejects_large_products_and_unknown_keys() {
        let text = TOY.replace("lambda = [0.0, 0.01]", "lambda = [0.6]");
        assert!(ExperimentConfig::parse(&text, "t").unwrap_err().to_string().contains("0.5"));
        let text = TOY.replace("steps = 300", "steps = 300\nstpes = 1");
        assert!(ExperimentConfig::parse(&text, "t").is_err());
        let text = TOY.replace("toy-rational", "mystery");
        assert!(ExperimentConfig::parse(&text, "t").unwrap_err().to_string().contains("unknown objective"));
    }

    #[test]
    fn fixed_product_rescales_init() {
        let text = TOY.replace("lambda = [0.0, 0.01]", "product = 1e-2\netas = [1.0, 4.0]\nrescale_init = true");
        let cfg = ExperimentConfig::parse(&text, "t").unwrap();
        assert_eq!(cfg.points[1].init_scale, 2.0);
        assert!((cfg.points[1].lambda - 2.5e-3).abs() < 1e-18);
    }

    #[test]
    fn families_take_defaults() {
        let text = TOY.replace("eta = 1.0", "family = \"adam\"\neta = 1.0");
        let cfg = ExperimentConfig::parse(&text, "t").unwrap();
        assert_eq!(
            cfg.optimizer.family,
            Family::Adam { beta1: DEFAULT_ADAM.0, beta2: DEFAULT_ADAM.1, eps: DEFAULT_ADAM.2 }
        );
        let text = TOY.replace("eta = 1.0", "family = \"rmsprop\"\neta = 1.0");
        assert!(ExperimentConfig::parse(&text, "t").unwrap_err().to_string().contains("t:7:"));
    }

    #[test]
    fn run_writes_hashed_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::parse(TOY, "t").unwrap();
        let out = run_experiment(&cfg, TOY, Some(dir.path())).unwrap();
        assert_eq!(out.points.len(), 2);
        assert!(out.dir.join("point-001/trace.csv").exists());
        let report = check_integrity(&out.dir).unwrap();
        assert!(report.ok());
        assert_eq!(report.checked, 3 + 2 + 2 * 2);
        let trace = io::read_trace_csv(&out.dir.join("point-000/trace.csv")).unwrap();
        assert_eq!(trace.len(), 300);
    }
}
