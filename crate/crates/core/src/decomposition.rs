//! The full decomposition pipeline: sample representatives, cluster them,
//! choose references, assign every remaining row to its best mode, and fit
//! per-weight affine coefficients in closed form.
//!
//! Each weight i in mode m is modeled as `w_i(k) ~ a_i * w_ref_m(k) + b_i`.
//! The coefficients minimize the squared residual over epochs; stacking the
//! per-row problems gives the usual 2x2 normal system in the reference and
//! the all-ones row, solved explicitly with a determinant check.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clustering::{choose_references, cut, linkage, resolve_cut, ClusterConfig, ResolvedCut};
use crate::correlation::{
    assign_row, centralize, corr_centralized, corr_matrix, is_effectively_static,
    sample_representatives, Assignment, CentralizedRow, STATIC_MODE,
};
use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::trajectory::{EpochSelection, LayerSpan, SnapshotMatrix};

/// Serialized model format version.
pub const MODEL_VERSION: u32 = 1;

/// Per-weight scale/offset pairs for one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineCoefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Sums of the reference needed by every row fit against it.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ReferenceStats {
    sum: f64,
    sum_sq: f64,
    len: usize,
}

impl ReferenceStats {
    pub(crate) fn new(reference: &[f64]) -> Self {
        Self {
            sum: reference.iter().sum(),
            sum_sq: reference.iter().map(|v| v * v).sum(),
            len: reference.len(),
        }
    }

    fn det(&self) -> f64 {
        self.len as f64 * self.sum_sq - self.sum * self.sum
    }

    fn trace(&self) -> f64 {
        self.sum_sq + self.len as f64
    }

    fn check(&self) -> Result<()> {
        if self.det().abs() <= 1e-12 * self.trace() {
            return Err(Error::Degenerate(
                "reference trajectory is numerically constant; affine fit is singular".into(),
            ));
        }
        Ok(())
    }
}

/// Least-squares scale and offset of one row against the reference.
pub(crate) fn fit_affine_row(row: &[f64], reference: &[f64], stats: &ReferenceStats) -> (f64, f64) {
    let n = stats.len as f64;
    let dot: f64 = row.iter().zip(reference).map(|(w, r)| w * r).sum();
    let sum_w: f64 = row.iter().sum();
    let det = stats.det();
    let a = (n * dot - sum_w * stats.sum) / det;
    let b = (stats.sum_sq * sum_w - stats.sum * dot) / det;
    (a, b)
}

/// Fit scale/offset per row of one mode against its reference trajectory.
pub fn fit_affine(rows: &[&[f64]], reference: &[f64]) -> Result<AffineCoefficients> {
    if reference.len() < 2 {
        return Err(Error::Data("reference must span at least two epochs".into()));
    }
    if rows.iter().any(|r| r.len() != reference.len()) {
        return Err(Error::Data("row length differs from reference length".into()));
    }
    let stats = ReferenceStats::new(reference);
    stats.check()?;
    let fitted = map_indexed(rows.len(), |i| fit_affine_row(rows[i], reference, &stats));
    Ok(AffineCoefficients {
        a: fitted.iter().map(|f| f.0).collect(),
        b: fitted.iter().map(|f| f.1).collect(),
    })
}

/// One mode's reference trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReference {
    pub id: usize,
    /// Row of the source matrix the reference was taken from.
    pub reference_index: usize,
    pub reference_values: Vec<f64>,
}

/// Per-weight model entry, ordered by row index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    /// Mode id, or -1 for the static mode.
    pub mode: i64,
    pub a: f64,
    pub b: f64,
    /// Signed correlation to the mode reference; 0 for static rows.
    pub corr: f64,
}

/// Complete decomposition model: references, per-weight affine coefficients,
/// the epoch selection the fit saw, and the configuration echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeModel {
    pub version: u32,
    /// Number of modes (excluding the static mode). Serialized as "M".
    #[serde(rename = "M")]
    pub mode_count: usize,
    pub epoch_selection: EpochSelection,
    pub config: ModelConfigEcho,
    pub layers: Vec<LayerSpan>,
    pub modes: Vec<ModeReference>,
    pub weights: Vec<WeightEntry>,
}

/// The clustering configuration as actually applied, with the threshold
/// resolved against the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfigEcho {
    pub sample_size: usize,
    pub cut: ResolvedCut,
    pub epsilon: f64,
    pub seed: u64,
}

impl ModeModel {
    pub fn n_rows(&self) -> usize {
        self.weights.len()
    }

    /// Stored epoch count of the reference trajectories.
    pub fn n_epochs(&self) -> usize {
        self.modes.first().map_or(0, |m| m.reference_values.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {}, expected {MODEL_VERSION}",
                self.version
            )));
        }
        if self.mode_count != self.modes.len() {
            return Err(Error::Format(format!(
                "mode_count {} disagrees with {} stored modes",
                self.mode_count,
                self.modes.len()
            )));
        }
        if self.modes.is_empty() {
            return Err(Error::Format("model stores no modes".into()));
        }
        self.epoch_selection.validate()?;
        let epochs = self.n_epochs();
        if epochs < 2 {
            return Err(Error::Format("reference trajectories span fewer than two epochs".into()));
        }
        if self.epoch_selection.retained_epochs.len() != epochs {
            return Err(Error::Format(
                "epoch selection length disagrees with reference trajectories".into(),
            ));
        }
        for (i, mode) in self.modes.iter().enumerate() {
            if mode.id != i {
                return Err(Error::Format(format!("mode ids must be consecutive, found {}", mode.id)));
            }
            if mode.reference_values.len() != epochs {
                return Err(Error::Format(format!(
                    "mode {i} reference has {} epochs, expected {epochs}",
                    mode.reference_values.len()
                )));
            }
            if mode.reference_values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("mode {i} reference holds non-finite values")));
            }
            if mode.reference_index >= self.weights.len() {
                return Err(Error::Format(format!(
                    "mode {i} reference index {} out of range",
                    mode.reference_index
                )));
            }
        }
        if self.weights.is_empty() {
            return Err(Error::Format("model stores no weights".into()));
        }
        for (i, w) in self.weights.iter().enumerate() {
            if !(w.a.is_finite() && w.b.is_finite() && w.corr.is_finite()) {
                return Err(Error::Data(format!("weight {i} holds non-finite coefficients")));
            }
            if w.corr.abs() > 1.0 {
                return Err(Error::Data(format!(
                    "weight {i} correlation {} outside [-1, 1]",
                    w.corr
                )));
            }
            if w.mode == STATIC_MODE {
                if w.a != 0.0 {
                    return Err(Error::Data(format!("static weight {i} must have a = 0")));
                }
            } else if w.mode < 0 || w.mode as usize >= self.mode_count {
                return Err(Error::Format(format!("weight {i} references unknown mode {}", w.mode)));
            }
        }
        let covered: usize = self.layers.iter().map(|l| l.row_count).sum();
        if covered != self.weights.len() {
            return Err(Error::LayerIndex(format!(
                "layer spans cover {covered} rows, model has {}",
                self.weights.len()
            )));
        }
        Ok(())
    }
}

/// Wall-clock milliseconds spent in each pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub sample_ms: f64,
    pub corr_ms: f64,
    pub linkage_ms: f64,
    pub cut_ms: f64,
    pub assign_ms: f64,
    pub fit_ms: f64,
    pub total_ms: f64,
}

/// Run metadata from one decomposition: stage timings and the sampled rows.
#[derive(Debug, Clone)]
pub struct DecomposeTrace {
    pub timings: StageTimings,
    pub sample: crate::correlation::SampleSet,
}

/// Run the full pipeline. Deterministic given the matrix, configuration and
/// seed: identical inputs yield byte-identical models for any worker count.
pub fn decompose(m: &SnapshotMatrix, cfg: &ClusterConfig) -> Result<ModeModel> {
    decompose_traced(m, cfg).map(|(model, _)| model)
}

/// [`decompose`] plus per-stage wall-clock timings and sample diagnostics.
pub fn decompose_traced(m: &SnapshotMatrix, cfg: &ClusterConfig) -> Result<(ModeModel, DecomposeTrace)> {
    cfg.validate()?;
    let started = Instant::now();
    let mut timings = StageTimings::default();

    let stage = Instant::now();
    let sample = sample_representatives(m, cfg.sample_size, cfg.seed)
        .map_err(|e| stage_error("sample", e))?;
    timings.sample_ms = ms_since(stage);

    let stage = Instant::now();
    let corr = corr_matrix(m, &sample).map_err(|e| stage_error("correlation", e))?;
    timings.corr_ms = ms_since(stage);

    let stage = Instant::now();
    let dendrogram = linkage(&corr).map_err(|e| stage_error("linkage", e))?;
    timings.linkage_ms = ms_since(stage);

    let stage = Instant::now();
    let resolved = resolve_cut(&cfg.cut, &corr);
    let labels = cut(&dendrogram, &resolved);
    let references =
        choose_references(m, &corr, &labels, &sample).map_err(|e| stage_error("cut", e))?;
    timings.cut_ms = ms_since(stage);

    let stage = Instant::now();
    let assignments = assign_all(m, &sample, &labels, &references)?;
    timings.assign_ms = ms_since(stage);

    let stage = Instant::now();
    let weights = fit_all(m, &references, &assignments)?;
    timings.fit_ms = ms_since(stage);

    let model = ModeModel {
        version: MODEL_VERSION,
        mode_count: references.len(),
        epoch_selection: EpochSelection::full(m.last_epoch()),
        config: ModelConfigEcho {
            sample_size: cfg.sample_size,
            cut: resolved,
            epsilon: cfg.epsilon,
            seed: cfg.seed,
        },
        layers: m.layers().to_vec(),
        modes: references
            .into_iter()
            .map(|r| ModeReference {
                id: r.mode_id,
                reference_index: r.row_index,
                reference_values: r.trajectory,
            })
            .collect(),
        weights,
    };
    timings.total_ms = ms_since(started);
    model.validate()?;
    Ok((model, DecomposeTrace { timings, sample }))
}

fn stage_error(stage: &str, e: Error) -> Error {
    match e {
        Error::Degenerate(msg) => Error::Degenerate(format!("{stage} stage: {msg}")),
        other => other,
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Assignment for every row: sampled rows keep their cluster label (with the
/// correlation to their own reference), all others take the argmax reference.
fn assign_all(
    m: &SnapshotMatrix,
    sample: &crate::correlation::SampleSet,
    labels: &[usize],
    references: &[crate::clustering::Reference],
) -> Result<Vec<Assignment>> {
    let refs: Vec<CentralizedRow> =
        references.iter().map(|r| centralize(&r.trajectory)).collect();
    if let Some(bad) = refs.iter().position(|c| c.norm == 0.0) {
        return Err(Error::Degenerate(format!("reference {bad} has zero variance")));
    }
    // Cluster label per row for the sampled rows; usize::MAX elsewhere.
    let mut sampled_label = vec![usize::MAX; m.n_rows()];
    for (leaf, &row) in sample.indices.iter().enumerate() {
        sampled_label[row] = labels[leaf];
    }
    Ok(map_indexed(m.n_rows(), |i| {
        let label = sampled_label[i];
        if label != usize::MAX {
            let c = corr_centralized(&centralize(m.row(i)), &refs[label])
                .expect("sampled rows are nonconstant by construction");
            Assignment { mode: label as i64, corr: c }
        } else if is_effectively_static(m.row(i)) {
            Assignment { mode: STATIC_MODE, corr: 0.0 }
        } else {
            assign_row(&centralize(m.row(i)), &refs)
        }
    }))
}

/// Affine coefficients for every row in one pass. Static rows get a = 0 and
/// b = their constant value.
fn fit_all(
    m: &SnapshotMatrix,
    references: &[crate::clustering::Reference],
    assignments: &[Assignment],
) -> Result<Vec<WeightEntry>> {
    let stats: Vec<ReferenceStats> = references
        .iter()
        .map(|r| {
            let s = ReferenceStats::new(&r.trajectory);
            s.check().map(|_| s)
        })
        .collect::<Result<_>>()?;
    Ok(map_indexed(m.n_rows(), |i| {
        let assignment = assignments[i];
        if assignment.mode == STATIC_MODE {
            // Constant rows reproduce their value; near-frozen rows get
            // their mean, the best constant in least squares.
            let row = m.row(i);
            let b = row.iter().sum::<f64>() / row.len() as f64;
            WeightEntry { mode: STATIC_MODE, a: 0.0, b, corr: 0.0 }
        } else {
            let mode = assignment.mode as usize;
            let (a, b) = fit_affine_row(m.row(i), &references[mode].trajectory, &stats[mode]);
            WeightEntry { mode: assignment.mode, a, b, corr: assignment.corr }
        }
    }))
}

/// Rebuild the trajectory matrix from the model's own reference trajectories.
pub fn reconstruct(model: &ModeModel) -> Result<SnapshotMatrix> {
    model.validate()?;
    let epochs = model.n_epochs();
    reconstruct_inner(model, epochs, |mode| &model.modes[mode].reference_values)
}

/// Rebuild at full length using reference trajectories taken from `source`
/// (by the stored reference row indices). This scores a model fitted on a
/// truncated or subsampled history against every original epoch.
pub fn reconstruct_with_reference_source(
    model: &ModeModel,
    source: &SnapshotMatrix,
) -> Result<SnapshotMatrix> {
    model.validate()?;
    if source.n_rows() != model.n_rows() {
        return Err(Error::Data(format!(
            "reference source has {} rows, model has {}",
            source.n_rows(),
            model.n_rows()
        )));
    }
    reconstruct_inner(model, source.n_epochs(), |mode| {
        source.row(model.modes[mode].reference_index)
    })
}

fn reconstruct_inner<'a, F>(model: &ModeModel, epochs: usize, reference_of: F) -> Result<SnapshotMatrix>
where
    F: Fn(usize) -> &'a [f64] + Sync,
{
    let n = model.n_rows();
    let rows: Vec<Vec<f64>> = map_indexed(n, |i| {
        let w = model.weights[i];
        if w.mode == STATIC_MODE {
            vec![w.b; epochs]
        } else {
            reference_of(w.mode as usize)
                .iter()
                .map(|&r| w.a * r + w.b)
                .collect()
        }
    });
    let mut values = Vec::with_capacity(n * epochs);
    for row in rows {
        values.extend(row);
    }
    SnapshotMatrix::new(values, n, epochs, model.layers.clone())
}

/// Write the model as JSON. Reals use the shortest representation that
/// round-trips, so save/load is bit-exact.
pub fn save_model(model: &ModeModel, path: impl AsRef<Path>) -> Result<()> {
    model.validate()?;
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, model)?;
    use std::io::Write;
    w.flush()?;
    Ok(())
}

/// Load and validate a model written by [`save_model`].
pub fn load_model(path: impl AsRef<Path>) -> Result<ModeModel> {
    let file = File::open(path)?;
    let model: ModeModel = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Format(format!("model schema violation: {e}")))?;
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::Cut;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn matrix_from_rows(rows: &[Vec<f64>]) -> SnapshotMatrix {
        let n_epochs = rows[0].len();
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        SnapshotMatrix::single_layer(values, rows.len(), n_epochs).unwrap()
    }

    #[test]
    fn exact_affine_row_is_recovered() {
        let r = vec![0.0, 1.0, 3.0, 2.5, 4.0];
        let row: Vec<f64> = r.iter().map(|&v| 2.0 * v + 1.0).collect();
        let coeffs = fit_affine(&[&row], &r).unwrap();
        approx(coeffs.a[0], 2.0, 1e-12);
        approx(coeffs.b[0], 1.0, 1e-12);
    }

    #[test]
    fn orthogonal_row_gets_zero_scale_and_mean_offset() {
        // Centralized reference [-1, 0, 1]; row [1, -2, 1] centralizes to
        // [1, -2, 1] which is orthogonal to it.
        let r = vec![0.0, 1.0, 2.0];
        let row = vec![1.0, -2.0, 1.0];
        let coeffs = fit_affine(&[&row], &r).unwrap();
        approx(coeffs.a[0], 0.0, 1e-12);
        approx(coeffs.b[0], 0.0, 1e-12); // row mean is 0
    }

    #[test]
    fn constant_reference_is_rejected() {
        let r = vec![3.0; 5];
        let row = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(matches!(
            fit_affine(&[&row], &r).unwrap_err(),
            Error::Degenerate(_)
        ));
    }

    // Independent route: per-row slope/intercept from covariance statistics.
    fn cov_fit_oracle(row: &[f64], r: &[f64]) -> (f64, f64) {
        let n = r.len() as f64;
        let mr = r.iter().sum::<f64>() / n;
        let mw = row.iter().sum::<f64>() / n;
        let cov: f64 = row.iter().zip(r).map(|(w, x)| (w - mw) * (x - mr)).sum::<f64>() / n;
        let var: f64 = r.iter().map(|x| (x - mr).powi(2)).sum::<f64>() / n;
        let a = cov / var;
        (a, mw - a * mr)
    }

    #[test]
    fn fit_matches_covariance_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let t = 101;
        let r: Vec<f64> = (0..t).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..t).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
            .collect();
        let row_refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let coeffs = fit_affine(&row_refs, &r).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let (a, b) = cov_fit_oracle(row, &r);
            assert!((coeffs.a[i] - a).abs() <= 1e-9 * a.abs().max(1.0));
            assert!((coeffs.b[i] - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    // The fitted pair must beat any nearby candidate on squared residual.
    #[test]
    fn fit_is_residual_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let row: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let coeffs = fit_affine(&[&row], &r).unwrap();
        let residual = |a: f64, b: f64| -> f64 {
            row.iter().zip(&r).map(|(w, x)| (w - a * x - b).powi(2)).sum()
        };
        let best = residual(coeffs.a[0], coeffs.b[0]);
        for da in [-0.1, -0.01, 0.01, 0.1] {
            for db in [-0.1, -0.01, 0.01, 0.1] {
                assert!(best <= residual(coeffs.a[0] + da, coeffs.b[0] + db) + 1e-15);
            }
        }
    }

    fn synthetic_three_modes(n: usize, t: usize, seed: u64) -> (SnapshotMatrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profiles: Vec<Vec<f64>> = vec![
            (0..t).map(|k| (-(k as f64) / 10.0).exp()).collect(),
            (0..t).map(|k| (k as f64) / t as f64).collect(),
            (0..t).map(|k| (k as f64 * 0.7).sin()).collect(),
        ];
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let mode = i % 3;
            let a = (0.5 + rng.random::<f64>()) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let b = rng.random::<f64>() * 2.0 - 1.0;
            rows.push(profiles[mode].iter().map(|&p| a * p + b).collect());
            labels.push(mode);
        }
        (matrix_from_rows(&rows), labels)
    }

    #[test]
    fn noise_free_pipeline_reconstructs_exactly() {
        let (m, labels) = synthetic_three_modes(60, 40, 9);
        let cfg = ClusterConfig::new(Cut::FixedModes { modes: 3 }, 1).with_sample_size(12);
        let model = decompose(&m, &cfg).unwrap();
        assert_eq!(model.mode_count, 3);

        // Labels match ground truth up to permutation.
        let mut map = std::collections::HashMap::new();
        for (i, w) in model.weights.iter().enumerate() {
            let entry = map.entry(labels[i]).or_insert(w.mode);
            assert_eq!(*entry, w.mode, "row {i} broke the mode permutation");
        }
        assert_eq!(map.len(), 3);

        let rec = reconstruct(&model).unwrap();
        let mse: f64 = m
            .values()
            .iter()
            .zip(rec.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / m.values().len() as f64;
        assert!(mse <= 1e-18, "mse = {mse:e}");
        assert_eq!(rec.layers(), m.layers());
        assert_eq!(rec.n_epochs(), m.n_epochs());
    }

    #[test]
    fn single_mode_reconstruction_is_affine_in_one_profile() {
        let (m, _) = synthetic_three_modes(30, 20, 2);
        let cfg = ClusterConfig::new(Cut::FixedModes { modes: 1 }, 7).with_sample_size(10);
        let model = decompose(&m, &cfg).unwrap();
        assert_eq!(model.mode_count, 1);
        let rec = reconstruct(&model).unwrap();
        // Every reconstructed row must be affine in the single reference.
        let r = &model.modes[0].reference_values;
        for i in 0..rec.n_rows() {
            let w = model.weights[i];
            for (k, &v) in rec.row(i).iter().enumerate() {
                approx(v, w.a * r[k] + w.b, 1e-12);
            }
        }
    }

    #[test]
    fn static_rows_reconstruct_as_constants() {
        let mut rows = vec![
            vec![1.0, 2.0, 4.0, 8.0],
            vec![2.0, 3.0, 5.0, 9.0],
            vec![7.5, 7.5, 7.5, 7.5],
        ];
        rows.push(rows[0].iter().map(|&v| -v).collect());
        let m = matrix_from_rows(&rows);
        let cfg = ClusterConfig::new(Cut::FixedModes { modes: 1 }, 0).with_sample_size(2);
        let model = decompose(&m, &cfg).unwrap();
        let statics: Vec<_> = model.weights.iter().filter(|w| w.mode == STATIC_MODE).collect();
        assert_eq!(statics.len(), 1);
        assert_eq!(statics[0].a, 0.0);
        assert_eq!(statics[0].b, 7.5);
        let rec = reconstruct(&model).unwrap();
        assert_eq!(rec.row(2), &[7.5; 4]);
    }

    #[test]
    fn decompose_is_deterministic() {
        let (m, _) = synthetic_three_modes(50, 30, 4);
        let cfg = ClusterConfig::new(Cut::HalfMaxDistance, 3).with_sample_size(20);
        let a = decompose(&m, &cfg).unwrap();
        let b = decompose(&m, &cfg).unwrap();
        assert_eq!(a, b);
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let (m, _) = synthetic_three_modes(24, 16, 6);
        let cfg = ClusterConfig::new(Cut::FixedModes { modes: 3 }, 5).with_sample_size(9);
        let model = decompose(&m, &cfg).unwrap();
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(model, back);
        for (x, y) in model.weights.iter().zip(&back.weights) {
            assert_eq!(x.a.to_bits(), y.a.to_bits());
            assert_eq!(x.b.to_bits(), y.b.to_bits());
            assert_eq!(x.corr.to_bits(), y.corr.to_bits());
        }
    }

    #[test]
    fn tampered_model_fails_validation_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let (m, _) = synthetic_three_modes(24, 16, 6);
        let cfg = ClusterConfig::new(Cut::FixedModes { modes: 3 }, 5).with_sample_size(9);
        let model = decompose(&m, &cfg).unwrap();
        save_model(&model, &path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        // Break a correlation outside [-1, 1].
        let tampered = text.replacen("\"corr\":", "\"corr\":7e0,\"x\":", 1);
        // serde rejects the unknown shape or validate rejects the range;
        // either way the load must fail.
        std::fs::write(&path, tampered).unwrap();
        assert!(load_model(&path).is_err());

        // Drop a required field.
        let broken = text.replacen("\"M\":", "\"M_\":", 1);
        std::fs::write(&path, broken).unwrap();
        assert!(matches!(load_model(&path).unwrap_err(), Error::Format(_)));
    }

    #[test]
    fn reconstruct_with_source_scores_full_history() {
        let (m, _) = synthetic_three_modes(30, 40, 8);
        let (sub, sel) = m.subsample_epochs(2).unwrap();
        let cfg = ClusterConfig::new(Cut::FixedModes { modes: 3 }, 2).with_sample_size(10);
        let mut model = decompose(&sub, &cfg).unwrap();
        model.epoch_selection = sel;
        model.validate().unwrap();
        let full = reconstruct_with_reference_source(&model, &m).unwrap();
        assert_eq!(full.n_epochs(), m.n_epochs());
        // Noise-free affine data: even the subsampled fit is exact.
        for (a, b) in m.values().iter().zip(full.values()) {
            approx(*a, *b, 1e-10);
        }
    }
}
