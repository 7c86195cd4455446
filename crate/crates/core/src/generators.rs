//! Ground-truth trajectory generators at desk scale.
//!
//! Three sources: gradient descent on a linear regression (optionally with
//! per-epoch data redrawing, which makes the discrete flow nonsmooth), plain
//! full-batch gradient descent on a tiny fully-connected classifier, and a
//! synthetic generator that emits exact affine images of a few base profiles
//! together with its ground-truth labels and coefficients.
//!
//! All generators are pure functions of their configuration: identical
//! configs (seed included) produce bit-identical output.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{LayerSpan, SnapshotMatrix};

/// Any |weight| beyond this is treated as divergence rather than growth.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Standard deviation of the observation noise added to the regression
/// targets (y = w_hidden * x + noise).
const TARGET_NOISE_STD: f64 = 0.05;

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

// ---------------------------------------------------------------------------
// Linear regression under gradient descent
// ---------------------------------------------------------------------------

/// Configuration for the linear-regression trajectory generator.
///
/// The loss is 0.5 * |y - w x|_F^2 with x (m x n), y (d x n), w (d x m), and
/// the update is `w += eta_k (y - w x) x^T`. With `augmented` set, a fresh
/// (x, y) pair is drawn every epoch from the same generating law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyRegressionConfig {
    /// Output dimension d.
    pub d: usize,
    /// Input dimension m.
    pub m: usize,
    /// Sample count n.
    pub n: usize,
    /// Learning rate per epoch; a single entry means a constant rate.
    pub eta_schedule: Vec<f64>,
    pub augmented: bool,
    /// Number of gradient steps T; the trajectory stores T+1 snapshots.
    pub epochs: usize,
    pub seed: u64,
    /// Scale of the random initial weights.
    pub init_scale: f64,
}

impl ToyRegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.m == 0 || self.n == 0 {
            return Err(Error::Config("dimensions d, m, n must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.eta_schedule.len() != 1 && self.eta_schedule.len() != self.epochs {
            return Err(Error::Config(format!(
                "eta_schedule must have 1 or {} entries, got {}",
                self.epochs,
                self.eta_schedule.len()
            )));
        }
        if self.eta_schedule.iter().any(|&e| !(e >= 0.0) || !e.is_finite()) {
            return Err(Error::Config("learning rates must be finite and nonnegative".into()));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::Config("init_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Run gradient descent `w += eta_k (y - w x) x^T` on fixed data, recording
/// the flattened weight matrix after every step.
///
/// Returns a (d*m) x (epochs+1) row-major trajectory buffer; row i*m+j holds
/// entry (i, j) of w.
pub fn gd_trajectory(
    d: usize,
    m: usize,
    n: usize,
    x: &[f64],
    y: &[f64],
    w0: &[f64],
    etas: &[f64],
    epochs: usize,
) -> Result<Vec<f64>> {
    gd_trajectory_with(d, m, n, w0, etas, epochs, |_| (x.to_vec(), y.to_vec()))
}

fn gd_trajectory_with(
    d: usize,
    m: usize,
    n: usize,
    w0: &[f64],
    etas: &[f64],
    epochs: usize,
    mut data_for_epoch: impl FnMut(usize) -> (Vec<f64>, Vec<f64>),
) -> Result<Vec<f64>> {
    assert_eq!(w0.len(), d * m);
    let n_rows = d * m;
    let n_epochs = epochs + 1;
    let mut trajectory = vec![0.0; n_rows * n_epochs];
    let mut w = w0.to_vec();
    let record = |trajectory: &mut Vec<f64>, w: &[f64], epoch: usize| {
        for (row, &v) in w.iter().enumerate() {
            trajectory[row * n_epochs + epoch] = v;
        }
    };
    record(&mut trajectory, &w, 0);

    let mut residual = vec![0.0; d * n];
    for k in 0..epochs {
        let (x, y) = data_for_epoch(k);
        assert_eq!(x.len(), m * n);
        assert_eq!(y.len(), d * n);
        // residual = y - w x
        for i in 0..d {
            for s in 0..n {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += w[i * m + j] * x[j * n + s];
                }
                residual[i * n + s] = y[i * n + s] - acc;
            }
        }
        // w += eta * residual x^T
        let eta = if etas.len() == 1 { etas[0] } else { etas[k] };
        for i in 0..d {
            for j in 0..m {
                let mut acc = 0.0;
                for s in 0..n {
                    acc += residual[i * n + s] * x[j * n + s];
                }
                w[i * m + j] += eta * acc;
            }
        }
        if let Some(bad) = w.iter().find(|v| !v.is_finite() || v.abs() > DIVERGENCE_THRESHOLD) {
            return Err(Error::Divergence {
                epoch: k + 1,
                detail: format!("|w| reached {bad:e}"),
            });
        }
        record(&mut trajectory, &w, k + 1);
    }
    Ok(trajectory)
}

/// Generate a linear-regression trajectory from the configuration.
///
/// The data law: x entries are i.i.d. standard normal; y = w_hidden x plus
/// gaussian observation noise for a hidden w_hidden drawn once. Augmented
/// runs redraw (x, y) from this law every epoch.
pub fn generate_toy_regression(cfg: &ToyRegressionConfig) -> Result<SnapshotMatrix> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (d, m, n) = (cfg.d, cfg.m, cfg.n);
    let w_hidden: Vec<f64> = (0..d * m).map(|_| standard_normal(&mut rng)).collect();
    let w0: Vec<f64> = (0..d * m)
        .map(|_| cfg.init_scale * standard_normal(&mut rng))
        .collect();
    let draw_data = |rng: &mut ChaCha8Rng| {
        let x: Vec<f64> = (0..m * n).map(|_| standard_normal(rng)).collect();
        let mut y = vec![0.0; d * n];
        for i in 0..d {
            for s in 0..n {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += w_hidden[i * m + j] * x[j * n + s];
                }
                y[i * n + s] = acc + TARGET_NOISE_STD * standard_normal(rng);
            }
        }
        (x, y)
    };

    let trajectory = if cfg.augmented {
        gd_trajectory_with(d, m, n, &w0, &cfg.eta_schedule, cfg.epochs, |_| draw_data(&mut rng))?
    } else {
        let (x, y) = draw_data(&mut rng);
        gd_trajectory(d, m, n, &x, &y, &w0, &cfg.eta_schedule, cfg.epochs)?
    };
    SnapshotMatrix::new(
        trajectory,
        d * m,
        cfg.epochs + 1,
        vec![LayerSpan::new("w", 0, d * m)],
    )
}

// ---------------------------------------------------------------------------
// Tiny fully-connected classifier under plain gradient descent
// ---------------------------------------------------------------------------

/// Synthetic 2-class, 2-D point cloud: two gaussian blobs centered at
/// (-1, -1) and (1, 1), exactly `count/2` points per class, plus a held-out
/// split of the same size drawn from the same law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointCloudSpec {
    pub count: usize,
    /// Standard deviation of the blobs.
    pub noise: f64,
    pub seed: u64,
}

/// Configuration for the fully-connected classifier trajectory generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpTaskConfig {
    /// Layer widths, input to output; the task fixes input 2 and output 2.
    pub layer_widths: Vec<usize>,
    /// Number of gradient steps T.
    pub epochs: usize,
    pub learning_rate: f64,
    pub dataset: PointCloudSpec,
    pub seed: u64,
}

impl MlpTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 3 {
            return Err(Error::Config("at least one hidden layer is required".into()));
        }
        if self.layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.layer_widths[0] != 2 || *self.layer_widths.last().unwrap() != 2 {
            return Err(Error::Config(
                "the point-cloud task needs input width 2 and output width 2".into(),
            ));
        }
        if self.param_count() > 200_000 {
            return Err(Error::Config(format!(
                "parameter count {} exceeds the desk-scale cap of 200000",
                self.param_count()
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be finite and nonnegative".into()));
        }
        if self.dataset.count < 2 {
            return Err(Error::Config("dataset needs at least two points".into()));
        }
        if !(self.dataset.noise >= 0.0) {
            return Err(Error::Config("dataset noise must be nonnegative".into()));
        }
        Ok(())
    }

    /// Total scalar parameter count over all weight matrices and biases.
    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Layer index entries matching the flattening order: per layer, the
    /// row-major weight matrix followed by the bias vector.
    pub fn layer_index(&self) -> Vec<LayerSpan> {
        let mut layers = Vec::new();
        let mut start = 0usize;
        for (l, w) in self.layer_widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            layers.push(LayerSpan::new(format!("fc{l}.weight"), start, fan_in * fan_out));
            start += fan_in * fan_out;
            layers.push(LayerSpan::new(format!("fc{l}.bias"), start, fan_out));
            start += fan_out;
        }
        layers
    }
}

/// Loss and accuracy on both splits at one snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

/// The generated point-cloud task data.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub train_inputs: Vec<[f64; 2]>,
    pub train_labels: Vec<usize>,
    pub test_inputs: Vec<[f64; 2]>,
    pub test_labels: Vec<usize>,
}

/// Draw the train and held-out splits. Classes alternate point by point, so
/// both splits are balanced up to one point.
pub fn make_point_cloud(spec: &PointCloudSpec) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw_split = |count: usize| {
        let mut inputs = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let class = i % 2;
            let center = if class == 0 { -1.0 } else { 1.0 };
            let px = center + spec.noise * standard_normal(&mut rng);
            let py = center + spec.noise * standard_normal(&mut rng);
            inputs.push([px, py]);
            labels.push(class);
        }
        (inputs, labels)
    };
    let (train_inputs, train_labels) = draw_split(spec.count);
    let (test_inputs, test_labels) = draw_split(spec.count);
    PointCloud { train_inputs, train_labels, test_inputs, test_labels }
}

/// Flat parameter vector helpers for the fully-connected network. Layout per
/// layer: row-major weight matrix (out x in), then the bias vector.
struct MlpShape {
    widths: Vec<usize>,
    /// Offset of each layer's weight block in the flat vector.
    offsets: Vec<usize>,
}

impl MlpShape {
    fn new(widths: &[usize]) -> Self {
        let mut offsets = Vec::new();
        let mut start = 0usize;
        for w in widths.windows(2) {
            offsets.push(start);
            start += w[0] * w[1] + w[1];
        }
        Self { widths: widths.to_vec(), offsets }
    }

    fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    fn weight<'a>(&self, params: &'a [f64], l: usize) -> &'a [f64] {
        let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
        &params[self.offsets[l]..self.offsets[l] + fan_in * fan_out]
    }

    fn bias<'a>(&self, params: &'a [f64], l: usize) -> &'a [f64] {
        let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
        &params[self.offsets[l] + fan_in * fan_out..self.offsets[l] + fan_in * fan_out + fan_out]
    }
}

/// Forward pass returning every layer's post-activation values (ReLU between
/// layers, identity at the output).
fn forward(shape: &MlpShape, params: &[f64], input: &[f64; 2]) -> Vec<Vec<f64>> {
    let mut activations = vec![input.to_vec()];
    for l in 0..shape.layer_count() {
        let (fan_in, fan_out) = (shape.widths[l], shape.widths[l + 1]);
        let w = shape.weight(params, l);
        let b = shape.bias(params, l);
        let prev = activations.last().unwrap();
        let mut out = vec![0.0; fan_out];
        for o in 0..fan_out {
            let mut acc = b[o];
            for i in 0..fan_in {
                acc += w[o * fan_in + i] * prev[i];
            }
            out[o] = if l + 1 < shape.layer_count() { acc.max(0.0) } else { acc };
        }
        activations.push(out);
    }
    activations
}

fn softmax2(logits: &[f64]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

/// Mean cross-entropy loss and accuracy over a split. Argmax ties resolve to
/// class 0, so an all-zero network scores exactly the class-0 fraction.
fn evaluate_split(shape: &MlpShape, params: &[f64], inputs: &[[f64; 2]], labels: &[usize]) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, &label) in inputs.iter().zip(labels) {
        let logits = forward(shape, params, x).pop().unwrap();
        let p = softmax2(&logits);
        loss -= p[label].max(1e-300).ln();
        let predicted = if logits[1] > logits[0] { 1 } else { 0 };
        if predicted == label {
            correct += 1;
        }
    }
    (loss / inputs.len() as f64, correct as f64 / inputs.len() as f64)
}

/// Mean gradient of the cross-entropy loss over the training split.
fn full_batch_gradient(
    shape: &MlpShape,
    params: &[f64],
    inputs: &[[f64; 2]],
    labels: &[usize],
) -> Vec<f64> {
    let mut grad = vec![0.0; params.len()];
    let scale = 1.0 / inputs.len() as f64;
    for (x, &label) in inputs.iter().zip(labels) {
        let activations = forward(shape, params, x);
        let logits = &activations[shape.layer_count()];
        let p = softmax2(logits);
        // dL/dlogit = softmax - onehot
        let mut delta: Vec<f64> = vec![p[0], p[1]];
        delta[label] -= 1.0;
        for l in (0..shape.layer_count()).rev() {
            let (fan_in, fan_out) = (shape.widths[l], shape.widths[l + 1]);
            let prev = &activations[l];
            let w_off = shape.offsets[l];
            let b_off = w_off + fan_in * fan_out;
            for o in 0..fan_out {
                let d = delta[o] * scale;
                grad[b_off + o] += d;
                for i in 0..fan_in {
                    grad[w_off + o * fan_in + i] += d * prev[i];
                }
            }
            if l > 0 {
                let w = shape.weight(params, l);
                let mut next_delta = vec![0.0; fan_in];
                for i in 0..fan_in {
                    // ReLU gate on the post-activation of the layer below.
                    if activations[l][i] > 0.0 {
                        let mut acc = 0.0;
                        for o in 0..fan_out {
                            acc += delta[o] * w[o * fan_in + i];
                        }
                        next_delta[i] = acc;
                    }
                }
                delta = next_delta;
            }
        }
    }
    grad
}

/// He-style random initialization; biases start at zero.
fn init_params(shape: &MlpShape, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = shape
        .widths
        .windows(2)
        .map(|w| w[0] * w[1] + w[1])
        .sum();
    let mut params = vec![0.0; total];
    for l in 0..shape.layer_count() {
        let (fan_in, fan_out) = (shape.widths[l], shape.widths[l + 1]);
        let scale = (2.0 / fan_in as f64).sqrt();
        let off = shape.offsets[l];
        for v in params[off..off + fan_in * fan_out].iter_mut() {
            *v = scale * standard_normal(&mut rng);
        }
    }
    params
}

/// Train the classifier by plain full-batch gradient descent, recording a
/// snapshot and an evaluation record at every epoch 0..=T.
pub fn generate_mlp_training(cfg: &MlpTaskConfig) -> Result<(SnapshotMatrix, Vec<EvalRecord>)> {
    cfg.validate()?;
    let shape = MlpShape::new(&cfg.layer_widths);
    let data = make_point_cloud(&cfg.dataset);
    let mut params = init_params(&shape, cfg.seed);
    let n_rows = cfg.param_count();
    let n_epochs = cfg.epochs + 1;

    let mut values = vec![0.0; n_rows * n_epochs];
    let mut log = Vec::with_capacity(n_epochs);
    let record = |params: &[f64], epoch: usize, values: &mut Vec<f64>, log: &mut Vec<EvalRecord>| {
        for (row, &v) in params.iter().enumerate() {
            values[row * n_epochs + epoch] = v;
        }
        let (train_loss, train_accuracy) =
            evaluate_split(&shape, params, &data.train_inputs, &data.train_labels);
        let (test_loss, test_accuracy) =
            evaluate_split(&shape, params, &data.test_inputs, &data.test_labels);
        log.push(EvalRecord { train_loss, train_accuracy, test_loss, test_accuracy });
    };
    record(&params, 0, &mut values, &mut log);

    for k in 0..cfg.epochs {
        let grad = full_batch_gradient(&shape, &params, &data.train_inputs, &data.train_labels);
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g;
        }
        if let Some(bad) = params.iter().find(|v| !v.is_finite() || v.abs() > DIVERGENCE_THRESHOLD) {
            return Err(Error::Divergence {
                epoch: k + 1,
                detail: format!("|w| reached {bad:e}"),
            });
        }
        record(&params, k + 1, &mut values, &mut log);
    }

    let m = SnapshotMatrix::new(values, n_rows, n_epochs, cfg.layer_index())?;
    Ok((m, log))
}

/// Load the snapshot at `epoch` into the network and evaluate both splits.
pub fn evaluate_weights(cfg: &MlpTaskConfig, m: &SnapshotMatrix, epoch: usize) -> Result<EvalRecord> {
    cfg.validate()?;
    if m.n_rows() != cfg.param_count() {
        return Err(Error::Data(format!(
            "matrix has {} rows, the task implies {} parameters",
            m.n_rows(),
            cfg.param_count()
        )));
    }
    if epoch >= m.n_epochs() {
        return Err(Error::Data(format!(
            "epoch {epoch} out of range 0..{}",
            m.n_epochs()
        )));
    }
    let shape = MlpShape::new(&cfg.layer_widths);
    let data = make_point_cloud(&cfg.dataset);
    let params = m.column(epoch);
    let (train_loss, train_accuracy) =
        evaluate_split(&shape, &params, &data.train_inputs, &data.train_labels);
    let (test_loss, test_accuracy) =
        evaluate_split(&shape, &params, &data.test_inputs, &data.test_labels);
    Ok(EvalRecord { train_loss, train_accuracy, test_loss, test_accuracy })
}

// ---------------------------------------------------------------------------
// Synthetic exact-mode generator
// ---------------------------------------------------------------------------

/// Base time-profile families for synthetic modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    ExponentialDecay,
    PiecewiseLinear,
    Oscillatory,
}

/// Configuration for the synthetic exact-mode generator.
///
/// Row i is `a_i * profile(mode(i)) + b_i + noise` with `mode(i) = i % m_true`
/// (modes interleave across rows). Both coefficients are drawn uniformly
/// from their ranges; a negative `a_range` produces anti-correlated members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticModesConfig {
    pub n: usize,
    /// Number of gradient epochs T; columns are 0..=T.
    pub t: usize,
    pub m_true: usize,
    /// One profile kind per mode.
    pub profile_kinds: Vec<ProfileKind>,
    /// Range (low, high) of the per-row scale.
    pub a_range: (f64, f64),
    /// Range (low, high) of the per-row offset.
    pub b_range: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticModesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 || self.m_true == 0 {
            return Err(Error::Config("n, t and m_true must be positive".into()));
        }
        if self.m_true > self.n {
            return Err(Error::Config(format!(
                "m_true {} exceeds row count {}",
                self.m_true, self.n
            )));
        }
        if self.profile_kinds.len() != self.m_true {
            return Err(Error::Config(format!(
                "profile_kinds must list {} kinds, got {}",
                self.m_true,
                self.profile_kinds.len()
            )));
        }
        if !(self.a_range.0.is_finite() && self.a_range.1 >= self.a_range.0) {
            return Err(Error::Config("a_range must satisfy low <= high".into()));
        }
        if !(self.b_range.1 >= self.b_range.0) {
            return Err(Error::Config("b_range must satisfy low <= high".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Output of the synthetic generator: the matrix plus the ground truth the
/// clustering and fitting stages should recover.
#[derive(Debug, Clone)]
pub struct SyntheticModes {
    pub matrix: SnapshotMatrix,
    /// True mode per row.
    pub labels: Vec<usize>,
    /// True (a, b) per row, before noise.
    pub coefficients: Vec<(f64, f64)>,
    /// The base profile of each mode.
    pub profiles: Vec<Vec<f64>>,
}

/// Build the base profile for mode `index`. Parameters depend on the mode
/// index so that two modes of the same kind stay distinguishable, plus a
/// small seed-driven jitter.
fn build_profile(kind: ProfileKind, index: usize, t: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let steps = t + 1;
    let jitter: f64 = rng.random::<f64>();
    match kind {
        ProfileKind::ExponentialDecay => {
            let rate = 2.0 + 2.5 * index as f64 + jitter;
            (0..steps)
                .map(|k| (-rate * k as f64 / t as f64).exp())
                .collect()
        }
        ProfileKind::PiecewiseLinear => {
            let knee = 0.15 + 0.6 * ((index as f64 * 0.37 + 0.5 * jitter) % 1.0);
            let tail_slope = 0.2 + 0.5 * jitter;
            (0..steps)
                .map(|k| {
                    let s = k as f64 / t as f64;
                    if s < knee {
                        s / knee
                    } else {
                        1.0 - tail_slope * (s - knee)
                    }
                })
                .collect()
        }
        ProfileKind::Oscillatory => {
            let cycles = 1.5 + 1.0 * index as f64 + jitter;
            let phase = std::f64::consts::TAU * rng.random::<f64>();
            (0..steps)
                .map(|k| {
                    let s = k as f64 / t as f64;
                    (std::f64::consts::TAU * cycles * s + phase).sin()
                })
                .collect()
        }
    }
}

/// Generate interleaved affine images of `m_true` base profiles.
pub fn generate_synthetic_modes(cfg: &SyntheticModesConfig) -> Result<SyntheticModes> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let profiles: Vec<Vec<f64>> = cfg
        .profile_kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| build_profile(kind, i, cfg.t, &mut rng))
        .collect();

    let steps = cfg.t + 1;
    let mut values = vec![0.0; cfg.n * steps];
    let mut labels = Vec::with_capacity(cfg.n);
    let mut coefficients = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let mode = i % cfg.m_true;
        let a = cfg.a_range.0 + (cfg.a_range.1 - cfg.a_range.0) * rng.random::<f64>();
        let b = cfg.b_range.0 + (cfg.b_range.1 - cfg.b_range.0) * rng.random::<f64>();
        let row = &mut values[i * steps..(i + 1) * steps];
        for (k, v) in row.iter_mut().enumerate() {
            let noise = if cfg.noise_sigma > 0.0 {
                cfg.noise_sigma * standard_normal(&mut rng)
            } else {
                0.0
            };
            *v = a * profiles[mode][k] + b + noise;
        }
        labels.push(mode);
        coefficients.push((a, b));
    }
    let matrix = SnapshotMatrix::single_layer(values, cfg.n, steps)?;
    Ok(SyntheticModes { matrix, labels, coefficients, profiles })
}
