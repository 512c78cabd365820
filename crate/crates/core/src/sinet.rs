//! A small fully scale-invariant classifier with hand-written gradients.
//!
//! Every trainable linear map is followed by batch normalization without
//! affine parameters, so rescaling the trainable weights leaves the outputs
//! unchanged. The final linear map is frozen at a random direction with a
//! fixed norm; it has no normalization after it and is never updated.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{self, OptimizerConfig, RunOptions, Trajectory};
use crate::error::{Error, Result};
use crate::objective::{check_point, Batch, GradientEval, Objective, ObjectiveKind, ObjectiveSpec, Stochasticity};
use crate::phases::{PeriodSummary, Phase, Segmentation};
use crate::vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    /// Piecewise linear; finite-difference checks need looser tolerances.
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the input `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    /// Frobenius norm of the frozen output layer.
    pub last_layer_norm: f64,
    pub activation: Activation,
}

impl NetSpec {
    pub fn mlp(input_dim: usize, hidden: &[usize], classes: usize) -> Self {
        NetSpec {
            input_dim,
            hidden: hidden.to_vec(),
            classes,
            last_layer_norm: 10.0,
            activation: Activation::Tanh,
        }
    }

    /// `(rows, cols)` of each trainable matrix, input side first.
    pub fn trainable_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len());
        let mut fan_in = self.input_dim;
        for &h in &self.hidden {
            shapes.push((h, fan_in));
            fan_in = h;
        }
        shapes
    }

    pub fn trainable_dim(&self) -> usize {
        self.trainable_shapes().iter().map(|(r, c)| r * c).sum()
    }

    pub fn frozen_shape(&self) -> (usize, usize) {
        (self.classes, *self.hidden.last().unwrap_or(&self.input_dim))
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes < 2 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Domain(
                "net needs input_dim >= 1, >= 1 hidden layer of width >= 1 and >= 2 classes".into(),
            ));
        }
        if !(self.last_layer_norm > 0.0) || !self.last_layer_norm.is_finite() {
            return Err(Error::Domain(format!("last_layer_norm must be positive, got {}", self.last_layer_norm)));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("NetSpec serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub dim: usize,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation of the class centers.
    pub separation: f64,
    /// Within-class standard deviation.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub spec: BlobSpec,
    pub seed: u64,
    pub centers: Vec<f64>,
    /// Row-major `n × dim`.
    pub train_x: Vec<f64>,
    pub train_y: Vec<usize>,
    pub test_x: Vec<f64>,
    pub test_y: Vec<usize>,
}

impl SyntheticDataset {
    pub fn n_train(&self) -> usize {
        self.train_y.len()
    }

    pub fn n_test(&self) -> usize {
        self.test_y.len()
    }

    /// Little-endian dump of every array, for byte-level comparisons.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [&self.centers, &self.train_x, &self.test_x] {
            for x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        for v in [&self.train_y, &self.test_y] {
            for &y in v.iter() {
                out.extend_from_slice(&(y as u64).to_le_bytes());
            }
        }
        out
    }
}

/// Gaussian blobs: class centers drawn once, examples interleaved by class so
/// that every prefix of the split is balanced.
pub fn make_dataset(spec: &BlobSpec, seed: u64) -> Result<SyntheticDataset> {
    if spec.dim == 0 || spec.classes < 2 || spec.train_per_class < 2 || spec.test_per_class < 1 {
        return Err(Error::Domain(
            "blobs need dim >= 1, >= 2 classes, >= 2 training and >= 1 test examples per class".into(),
        ));
    }
    if !(spec.separation > 0.0) || !(spec.spread > 0.0) {
        return Err(Error::Domain("separation and spread must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers_dist = Normal::new(0.0, spec.separation).map_err(|e| Error::Domain(e.to_string()))?;
    let noise = Normal::new(0.0, spec.spread).map_err(|e| Error::Domain(e.to_string()))?;
    let centers: Vec<f64> = (0..spec.classes * spec.dim).map(|_| centers_dist.sample(&mut rng)).collect();
    let mut draw = |per_class: usize| {
        let mut xs = Vec::with_capacity(per_class * spec.classes * spec.dim);
        let mut ys = Vec::with_capacity(per_class * spec.classes);
        for _ in 0..per_class {
            for c in 0..spec.classes {
                for j in 0..spec.dim {
                    xs.push(centers[c * spec.dim + j] + noise.sample(&mut rng));
                }
                ys.push(c);
            }
        }
        (xs, ys)
    };
    let (train_x, train_y) = draw(spec.train_per_class);
    let (test_x, test_y) = draw(spec.test_per_class);
    Ok(SyntheticDataset {
        spec: spec.clone(),
        seed,
        centers,
        train_x,
        train_y,
        test_x,
        test_y,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Built network bound to its dataset.
pub struct SiNet {
    id: String,
    spec: NetSpec,
    data: Arc<SyntheticDataset>,
    frozen: Vec<f64>,
    init: Vec<f64>,
    eval_batch: usize,
}

struct Layer {
    /// Normalized pre-activations `B × h`.
    zhat: Vec<f64>,
    /// Per-feature standard deviation.
    sigma: Vec<f64>,
    /// Activations `B × h`.
    act: Vec<f64>,
}

struct Forward {
    layers: Vec<Layer>,
    logits: Vec<f64>,
}

/// `out = a · wᵀ` for `a: n × k`, `w: m × k`.
fn matmul_t(a: &[f64], w: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &a[i * k..(i + 1) * k];
        for j in 0..m {
            out[i * m + j] = vector::dot(row, &w[j * k..(j + 1) * k]);
        }
    }
    out
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    row.iter().map(|z| z - lse).collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

impl SiNet {
    pub const ID_PREFIX: &'static str = "si-net";

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn dataset(&self) -> &SyntheticDataset {
        &self.data
    }

    pub fn frozen(&self) -> &[f64] {
        &self.frozen
    }

    pub fn initial_point(&self) -> &[f64] {
        &self.init
    }

    pub fn eval_batch(&self) -> usize {
        self.eval_batch
    }

    fn rows(&self, split: Split, indices: Option<&[usize]>) -> (Vec<f64>, Vec<usize>) {
        let d = self.spec.input_dim;
        let (xs, ys) = match split {
            Split::Train => (&self.data.train_x, &self.data.train_y),
            Split::Test => (&self.data.test_x, &self.data.test_y),
        };
        match indices {
            None => (xs.clone(), ys.clone()),
            Some(idx) => {
                let mut bx = Vec::with_capacity(idx.len() * d);
                for &i in idx {
                    bx.extend_from_slice(&xs[i * d..(i + 1) * d]);
                }
                (bx, idx.iter().map(|&i| ys[i]).collect())
            }
        }
    }

    fn forward(&self, params: &[f64], inputs: &[f64], n: usize) -> Result<Forward> {
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let act_fn = self.spec.activation;
        let mut layers = Vec::with_capacity(self.spec.hidden.len());
        let mut offset = 0;
        let mut input = inputs.to_vec();
        for (li, (rows, cols)) in self.spec.trainable_shapes().into_iter().enumerate() {
            let w = &params[offset..offset + rows * cols];
            offset += rows * cols;
            let mut z = matmul_t(&input, w, n, cols, rows);
            let mut sigma = vec![0.0; rows];
            for j in 0..rows {
                let mean = (0..n).map(|b| z[b * rows + j]).sum::<f64>() / n as f64;
                let var = (0..n).map(|b| (z[b * rows + j] - mean).powi(2)).sum::<f64>() / n as f64;
                if !(var > 0.0) {
                    return Err(Error::ZeroVariance { layer: li });
                }
                let s = var.sqrt();
                sigma[j] = s;
                for b in 0..n {
                    z[b * rows + j] = (z[b * rows + j] - mean) / s;
                }
            }
            let act: Vec<f64> = z.iter().map(|&v| act_fn.apply(v)).collect();
            input = act.clone();
            layers.push(Layer { zhat: z, sigma, act });
        }
        let (k, h) = self.spec.frozen_shape();
        let logits = matmul_t(&input, &self.frozen, n, h, k);
        Ok(Forward { layers, logits })
    }

    /// Mean cross-entropy, misclassification rate and gradient on one batch.
    fn loss_and_grad(&self, params: &[f64], inputs: &[f64], labels: &[usize]) -> Result<(f64, f64, Vec<f64>)> {
        let n = labels.len();
        let fwd = self.forward(params, inputs, n)?;
        let (k, h_last) = self.spec.frozen_shape();
        let mut loss = 0.0;
        let mut wrong = 0usize;
        let mut dlogits = vec![0.0; n * k];
        for b in 0..n {
            let row = &fwd.logits[b * k..(b + 1) * k];
            let lsm = log_softmax_row(row);
            loss -= lsm[labels[b]];
            if argmax(row) != labels[b] {
                wrong += 1;
            }
            for c in 0..k {
                let p = lsm[c].exp();
                dlogits[b * k + c] = (p - if c == labels[b] { 1.0 } else { 0.0 }) / n as f64;
            }
        }
        loss /= n as f64;

        let shapes = self.spec.trainable_shapes();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut acc = 0;
        for (r, c) in &shapes {
            offsets.push(acc);
            acc += r * c;
        }
        let mut grad = vec![0.0; acc];

        // dA for the last hidden layer: dlogits · W_frozen.
        let mut d_act = vec![0.0; n * h_last];
        for b in 0..n {
            for c in 0..k {
                let g = dlogits[b * k + c];
                if g != 0.0 {
                    let wrow = &self.frozen[c * h_last..(c + 1) * h_last];
                    let out = &mut d_act[b * h_last..(b + 1) * h_last];
                    for (o, w) in out.iter_mut().zip(wrow) {
                        *o += g * w;
                    }
                }
            }
        }

        let act_fn = self.spec.activation;
        for li in (0..shapes.len()).rev() {
            let (rows, cols) = shapes[li];
            let layer = &fwd.layers[li];
            let mut dz = vec![0.0; n * rows];
            for j in 0..rows {
                let mut mean_d = 0.0;
                let mut mean_dz = 0.0;
                for b in 0..n {
                    let idx = b * rows + j;
                    let dzhat = d_act[idx] * act_fn.derivative(layer.zhat[idx], layer.act[idx]);
                    dz[idx] = dzhat;
                    mean_d += dzhat;
                    mean_dz += dzhat * layer.zhat[idx];
                }
                mean_d /= n as f64;
                mean_dz /= n as f64;
                let inv = 1.0 / layer.sigma[j];
                for b in 0..n {
                    let idx = b * rows + j;
                    dz[idx] = inv * (dz[idx] - mean_d - layer.zhat[idx] * mean_dz);
                }
            }
            let input: &[f64] = if li == 0 { inputs } else { &fwd.layers[li - 1].act };
            let gw = &mut grad[offsets[li]..offsets[li] + rows * cols];
            for b in 0..n {
                let xrow = &input[b * cols..(b + 1) * cols];
                for j in 0..rows {
                    let g = dz[b * rows + j];
                    let out = &mut gw[j * cols..(j + 1) * cols];
                    for (o, x) in out.iter_mut().zip(xrow) {
                        *o += g * x;
                    }
                }
            }
            if li > 0 {
                let w = &params[offsets[li]..offsets[li] + rows * cols];
                let mut next = vec![0.0; n * cols];
                for b in 0..n {
                    let out = &mut next[b * cols..(b + 1) * cols];
                    for j in 0..rows {
                        let g = dz[b * rows + j];
                        for (o, wv) in out.iter_mut().zip(&w[j * cols..(j + 1) * cols]) {
                            *o += g * wv;
                        }
                    }
                }
                d_act = next;
            }
        }
        Ok((loss, wrong as f64 / n as f64, grad))
    }

    /// Chunks of `0..n` of size `eval_batch`; a short remainder joins the
    /// last chunk so every chunk has at least two examples.
    fn eval_chunks(&self, n: usize) -> Vec<std::ops::Range<usize>> {
        let size = self.eval_batch.min(n).max(2);
        let mut out = Vec::new();
        let mut s = 0;
        while s < n {
            let e = (s + size).min(n);
            if n - e > 0 && n - e < size {
                out.push(s..n);
                break;
            }
            out.push(s..e);
            s = e;
        }
        out
    }

    /// Per-example logits on a split, using batch statistics of fixed-size
    /// evaluation batches.
    pub fn logits(&self, params: &[f64], split: Split) -> Result<Vec<f64>> {
        check_point(params, self.spec.trainable_dim())?;
        let d = self.spec.input_dim;
        let (xs, ys) = self.rows(split, None);
        let mut out = Vec::with_capacity(ys.len() * self.spec.classes);
        for r in self.eval_chunks(ys.len()) {
            let fwd = self.forward(params, &xs[r.start * d..r.end * d], r.len())?;
            out.extend(fwd.logits);
        }
        Ok(out)
    }

    pub fn probabilities(&self, params: &[f64], split: Split) -> Result<Vec<f64>> {
        let k = self.spec.classes;
        let logits = self.logits(params, split)?;
        Ok(logits.chunks(k).flat_map(|row| log_softmax_row(row).into_iter().map(f64::exp)).collect())
    }

    pub fn error(&self, params: &[f64], split: Split) -> Result<f64> {
        let k = self.spec.classes;
        let labels = match split {
            Split::Train => &self.data.train_y,
            Split::Test => &self.data.test_y,
        };
        let logits = self.logits(params, split)?;
        Ok(error_from_scores(&logits, labels, k))
    }

    /// Loss, error and gradient on an explicit subset of the training set.
    pub fn evaluate_indices(&self, params: &[f64], indices: &[usize]) -> Result<GradientEval> {
        check_point(params, self.spec.trainable_dim())?;
        let (bx, by) = self.rows(Split::Train, Some(indices));
        let (loss, err, grad) = self.loss_and_grad(params, &bx, &by)?;
        Ok(GradientEval::new(params, loss, grad, Some(err)))
    }
}

fn error_from_scores(scores: &[f64], labels: &[usize], k: usize) -> f64 {
    let wrong = scores.chunks(k).zip(labels).filter(|(row, &y)| argmax(row) != y).count();
    wrong as f64 / labels.len() as f64
}

impl Objective for SiNet {
    fn id(&self) -> &str {
        &self.id
    }

    fn spec(&self) -> ObjectiveSpec {
        ObjectiveSpec {
            kind: ObjectiveKind::SiNet,
            stochasticity: Stochasticity::Minibatch { examples: self.data.n_train() },
            dimension: self.spec.trainable_dim(),
        }
    }

    fn evaluate(&self, x: &[f64], batch: Batch<'_>) -> Result<GradientEval> {
        check_point(x, self.spec.trainable_dim())?;
        let (bx, by) = match batch {
            Batch::Full => self.rows(Split::Train, None),
            Batch::Indices(idx) => self.rows(Split::Train, Some(idx)),
        };
        let (loss, err, grad) = self.loss_and_grad(x, &bx, &by)?;
        Ok(GradientEval::new(x, loss, grad, Some(err)))
    }
}

/// Builds the network: trainable weights drawn with variance `1/fan_in`, the
/// frozen output layer a random direction scaled to `last_layer_norm`.
pub fn build(id: &str, spec: &NetSpec, data: Arc<SyntheticDataset>, seed: u64) -> Result<SiNet> {
    spec.validate()?;
    if data.spec.dim != spec.input_dim || data.spec.classes != spec.classes {
        return Err(Error::Domain(format!(
            "dataset shape ({} dims, {} classes) does not match the net ({} dims, {} classes)",
            data.spec.dim, data.spec.classes, spec.input_dim, spec.classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = Vec::with_capacity(spec.trainable_dim());
    for (rows, cols) in spec.trainable_shapes() {
        let scale = 1.0 / (cols as f64).sqrt();
        for _ in 0..rows * cols {
            let z: f64 = StandardNormal.sample(&mut rng);
            init.push(scale * z);
        }
    }
    let (k, h) = spec.frozen_shape();
    let raw: Vec<f64> = (0..k * h).map(|_| StandardNormal.sample(&mut rng)).collect();
    let frozen = vector::scaled(&raw, spec.last_layer_norm / vector::norm(&raw));
    Ok(SiNet {
        id: id.to_string(),
        spec: spec.clone(),
        data,
        frozen,
        init,
        eval_batch: 128,
    })
}

impl SiNet {
    pub fn with_eval_batch(mut self, size: usize) -> Self {
        self.eval_batch = size.max(2);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub params: Vec<f64>,
    pub test_error: f64,
    pub spec_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub train_error: f64,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub trajectory: Trajectory,
    pub checkpoints: Vec<Checkpoint>,
    pub epochs: Vec<EpochRecord>,
}

/// Runs the optimizer on the net, evaluating full train/test error every
/// `eval_every` steps and capturing checkpoints at the requested steps.
pub fn train(
    net: &SiNet,
    config: &OptimizerConfig,
    x0: &[f64],
    checkpoint_steps: &[usize],
    eval_every: usize,
) -> Result<TrainOutput> {
    let options = RunOptions { checkpoint_steps: checkpoint_steps.iter().copied().collect() };
    let mut epochs = Vec::new();
    let mut failure = None;
    let eval_every = eval_every.max(1);
    let trajectory = dynamics::run_with(net, config, x0, &options, |t, x| {
        if failure.is_some() || t % eval_every != 0 {
            return;
        }
        let res = net.error(x, Split::Train).and_then(|tr| Ok((tr, net.error(x, Split::Test)?)));
        match res {
            Ok((train_error, test_error)) => epochs.push(EpochRecord {
                epoch: t / eval_every,
                step: t,
                train_error,
                test_error,
            }),
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let spec_hash = net.spec.hash();
    let checkpoints = trajectory
        .checkpoints
        .iter()
        .map(|c| {
            Ok(Checkpoint {
                step: c.step,
                params: c.params.clone(),
                test_error: net.error(&c.params, Split::Test)?,
                spec_hash: spec_hash.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainOutput { trajectory, checkpoints, epochs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub step: usize,
    pub cosine_sim: f64,
    /// Test error of the averaged class probabilities of anchor and other.
    pub ensemble_err: f64,
    /// Test error of the anchor alone.
    pub single_err: f64,
}

pub fn checkpoint_similarity(net: &SiNet, anchor: &Checkpoint, others: &[Checkpoint]) -> Result<Vec<SimilarityRow>> {
    let dim = net.spec.trainable_dim();
    let k = net.spec.classes;
    for c in std::iter::once(anchor).chain(others) {
        if c.params.len() != dim {
            return Err(Error::Dimension { expected: dim, got: c.params.len() });
        }
    }
    let anchor_probs = net.probabilities(&anchor.params, Split::Test)?;
    let single_err = error_from_scores(&anchor_probs, &net.data.test_y, k);
    others
        .iter()
        .map(|c| {
            let probs = net.probabilities(&c.params, Split::Test)?;
            let avg: Vec<f64> = anchor_probs.iter().zip(&probs).map(|(a, b)| 0.5 * (a + b)).collect();
            Ok(SimilarityRow {
                step: c.step,
                cosine_sim: vector::cosine(&anchor.params, &c.params),
                ensemble_err: error_from_scores(&avg, &net.data.test_y, k),
                single_err,
            })
        })
        .collect()
}

/// Similarity of one anchor to checkpoints inside and after its period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorStudy {
    pub anchor_step: usize,
    pub period: usize,
    /// Median cosine similarity to earlier checkpoints of the same phase B.
    pub within_median: f64,
    /// Median cosine similarity to phase-B checkpoints of later periods.
    pub cross_median: f64,
    pub single_err: f64,
    pub ensemble_median: f64,
    pub cross: Vec<SimilarityRow>,
}

impl AnchorStudy {
    pub fn gap(&self) -> f64 {
        self.within_median - self.cross_median
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStudy {
    pub anchors: Vec<AnchorStudy>,
    /// Anchors with a positive within/cross gap.
    pub positive_gaps: usize,
    /// One-sided sign-test p-value for the gaps.
    pub sign_test_p: f64,
    pub median_gap: f64,
    /// Median of `ensemble_err - single_err` over every cross-period pair.
    pub pooled_ensemble_delta: f64,
}

pub(crate) fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `P(X ≥ k)` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test_p(k: usize, n: usize) -> f64 {
    let mut total = 0.0;
    let mut c = 1.0f64;
    for i in 0..=n {
        if i > 0 {
            c = c * (n + 1 - i) as f64 / i as f64;
        }
        if i >= k {
            total += c;
        }
    }
    total / 2f64.powi(n as i32)
}

/// Anchors are the last checkpoint in each classified period's phase B
/// (skipping the final period, which has nothing after it). Periods whose
/// phase B holds fewer than three checkpoints are skipped.
pub fn similarity_study(net: &SiNet, checkpoints: &[Checkpoint], seg: &Segmentation) -> Result<SimilarityStudy> {
    let periods: Vec<&PeriodSummary> = seg.classified().collect();
    let in_b = |p: &PeriodSummary| -> Vec<Checkpoint> {
        let b = p.span(Phase::B).expect("classified period has phase B");
        checkpoints.iter().filter(|c| b.start <= c.step && c.step <= b.end).cloned().collect()
    };
    let mut anchors = Vec::new();
    for (i, p) in periods.iter().enumerate().take(periods.len().saturating_sub(1)) {
        let own = in_b(p);
        if own.len() < 3 {
            continue;
        }
        let (anchor, within) = own.split_last().unwrap();
        let later: Vec<Checkpoint> = periods[i + 1..].iter().flat_map(|q| in_b(q)).collect();
        if later.is_empty() {
            continue;
        }
        let w = checkpoint_similarity(net, anchor, within)?;
        let x = checkpoint_similarity(net, anchor, &later)?;
        anchors.push(AnchorStudy {
            anchor_step: anchor.step,
            period: p.index,
            within_median: median(w.iter().map(|r| r.cosine_sim).collect()),
            cross_median: median(x.iter().map(|r| r.cosine_sim).collect()),
            single_err: x[0].single_err,
            ensemble_median: median(x.iter().map(|r| r.ensemble_err).collect()),
            cross: x,
        });
    }
    let gaps: Vec<f64> = anchors.iter().map(AnchorStudy::gap).collect();
    let positive_gaps = gaps.iter().filter(|g| **g > 0.0).count();
    let pooled: Vec<f64> = anchors
        .iter()
        .flat_map(|a| a.cross.iter().map(|r| r.ensemble_err - r.single_err))
        .collect();
    Ok(SimilarityStudy {
        positive_gaps,
        sign_test_p: sign_test_p(positive_gaps, anchors.len()),
        median_gap: median(gaps),
        pooled_ensemble_delta: median(pooled),
        anchors,
    })
}

/// Desk-scale presets addressable as `si-net:<name>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetPreset {
    pub name: String,
    pub net: NetSpec,
    pub data: BlobSpec,
    pub data_seed: u64,
    pub init_seed: u64,
}

pub fn preset(name: &str) -> Option<NetPreset> {
    match name {
        "blobs4" => Some(NetPreset {
            name: name.into(),
            net: NetSpec::mlp(16, &[32, 32], 4),
            data: BlobSpec {
                dim: 16,
                classes: 4,
                train_per_class: 64,
                test_per_class: 64,
                separation: 1.0,
                spread: 1.0,
            },
            data_seed: 7,
            init_seed: 11,
        }),
        "tiny" => Some(NetPreset {
            name: name.into(),
            net: NetSpec::mlp(4, &[6, 5], 3),
            data: BlobSpec {
                dim: 4,
                classes: 3,
                train_per_class: 16,
                test_per_class: 16,
                separation: 2.0,
                spread: 1.0,
            },
            data_seed: 1,
            init_seed: 2,
        }),
        _ => None,
    }
}

pub const PRESETS: &[&str] = &["blobs4", "tiny"];

impl NetPreset {
    pub fn build(&self) -> Result<SiNet> {
        let data = Arc::new(make_dataset(&self.data, self.data_seed)?);
        build(&format!("{}:{}", SiNet::ID_PREFIX, self.name), &self.net, data, self.init_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::{self, NETWORK_TOL};

    #[test]
    fn sign_test_tail() {
        assert_eq!(sign_test_p(11, 11), 2f64.powi(-11));
        assert_eq!(sign_test_p(0, 5), 1.0);
        assert!((sign_test_p(2, 3) - 0.5).abs() < 1e-15);
    }

    fn tiny() -> SiNet {
        preset("tiny").unwrap().build().unwrap()
    }

    #[test]
    fn dimensions() {
        let net = tiny();
        assert_eq!(net.spec().trainable_dim(), 4 * 6 + 6 * 5);
        assert_eq!(net.frozen().len(), 3 * 5);
        assert!((vector::norm(net.frozen()) - 10.0).abs() < 1e-12);
        assert_eq!(net.dim(), net.initial_point().len());
    }

    #[test]
    fn dataset_is_deterministic_and_balanced() {
        let spec = preset("tiny").unwrap().data;
        let a = make_dataset(&spec, 5).unwrap();
        let b = make_dataset(&spec, 5).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_ne!(a.to_bytes(), make_dataset(&spec, 6).unwrap().to_bytes());
        for c in 0..3 {
            assert_eq!(a.train_y.iter().filter(|&&y| y == c).count(), 16);
        }
        let mut bad = spec.clone();
        bad.train_per_class = 1;
        assert!(make_dataset(&bad, 0).is_err());
    }

    #[test]
    fn logits_are_scale_invariant() {
        let net = tiny();
        let x = net.initial_point().to_vec();
        let a = net.logits(&x, Split::Test).unwrap();
        let b = net.logits(&vector::scaled(&x, 10.0), Split::Test).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-6 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn passes_certification() {
        let net = tiny();
        let o = certify::certify_orthogonality(&net, 100, 1, NETWORK_TOL).unwrap();
        assert!(o.passed, "{o:?}");
        let h = certify::certify_inverse_homogeneity(&net, &[0.5, 2.0, 3.0], 20, 2, NETWORK_TOL).unwrap();
        assert!(h.passed, "{h:?}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = tiny();
        let x = net.initial_point().to_vec();
        let batch: Vec<usize> = (0..24).collect();
        let err = certify::finite_difference_error(&net, &x, 1e-5, None, Batch::Indices(&batch)).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let net = tiny();
        let x = net.initial_point().to_vec();
        assert!(matches!(net.evaluate(&x, Batch::Indices(&[3])), Err(Error::BatchTooSmall(1))));
    }

    #[test]
    fn zero_row_gives_zero_variance() {
        let net = tiny();
        let mut x = net.initial_point().to_vec();
        for v in &mut x[0..4] {
            *v = 0.0;
        }
        assert!(matches!(net.evaluate(&x, Batch::Full), Err(Error::ZeroVariance { layer: 0 })));
    }

    #[test]
    fn self_similarity() {
        let net = tiny();
        let x = net.initial_point().to_vec();
        let err = net.error(&x, Split::Test).unwrap();
        let cp = Checkpoint { step: 0, params: x, test_error: err, spec_hash: net.spec().hash() };
        let rows = checkpoint_similarity(&net, &cp, std::slice::from_ref(&cp)).unwrap();
        assert!((rows[0].cosine_sim - 1.0).abs() < 1e-12);
        assert_eq!(rows[0].ensemble_err, rows[0].single_err);
        assert_eq!(rows[0].single_err, err);
        let short = Checkpoint { params: vec![1.0; 3], ..cp.clone() };
        assert!(checkpoint_similarity(&net, &cp, &[short]).is_err());
    }

    #[test]
    fn separated_blobs_are_learnable() {
        let net = tiny();
        let cfg = OptimizerConfig::gd(0.5, 0.0, 300);
        let out = train(&net, &cfg, net.initial_point(), &[0, 300], 100).unwrap();
        assert!(out.trajectory.closed_form.as_ref().unwrap().passed());
        let last = out.trajectory.records.last().unwrap();
        assert!(last.train_error.unwrap() <= 0.05, "{last:?}");
        assert_eq!(out.checkpoints.len(), 2);
        assert_eq!(out.epochs.len(), 4);
    }
}
