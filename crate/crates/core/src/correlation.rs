//! Centralization, correlation over the epoch axis, representative sampling
//! and the linear-complexity assignment pass.
//!
//! Correlation of two trajectories u, v is `<u_c, v_c> / (|u_c| |v_c|)` where
//! `u_c` subtracts the mean over all T+1 epochs. The full N x N matrix is
//! never materialized: only the K sampled rows are correlated pairwise, and
//! every remaining row is compared against the M references only, giving
//! K^2*T + (N-K)*M*T work overall.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::trajectory::SnapshotMatrix;

/// Reserved mode id for zero-variance rows, reconstructed as constants.
pub const STATIC_MODE: i64 = -1;

/// True for rows whose variance is too small to support a correlation or an
/// affine fit.
///
/// The predicate matches the singularity test of the affine normal system
/// (determinant at most 1e-12 of the trace), so a row admitted here can
/// always serve as a reference. Frozen and near-frozen parameters of real
/// networks land in the static mode through this check.
pub fn is_effectively_static(row: &[f64]) -> bool {
    let first = row[0];
    if row.iter().all(|&v| v == first) {
        return true;
    }
    let n = row.len() as f64;
    let sum: f64 = row.iter().sum();
    let sum_sq: f64 = row.iter().map(|v| v * v).sum();
    let det = n * sum_sq - sum * sum;
    det.abs() <= 1e-12 * (sum_sq + n)
}

/// A trajectory with its epoch-mean removed, plus the Euclidean norm of the
/// centralized values.
#[derive(Debug, Clone)]
pub struct CentralizedRow {
    pub values: Vec<f64>,
    pub norm: f64,
}

/// Subtract the mean over epochs 0..=T (division by T+1) and record the norm.
pub fn centralize(row: &[f64]) -> CentralizedRow {
    assert!(row.len() >= 2, "trajectory must span at least two epochs");
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    let values: Vec<f64> = row.iter().map(|&v| v - mean).collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    CentralizedRow { values, norm }
}

/// Correlation of two equal-length trajectories, clamped to [-1, 1].
///
/// Zero-variance inputs have no defined correlation; the caller decides how
/// to handle them (the decomposition routes such rows to the static mode).
pub fn corr(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Data(format!(
            "correlation of trajectories with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let cu = centralize(u);
    let cv = centralize(v);
    corr_centralized(&cu, &cv).ok_or_else(|| {
        Error::Degenerate("correlation of a zero-variance trajectory is undefined".into())
    })
}

/// Correlation of two pre-centralized rows; `None` if either norm is zero.
pub fn corr_centralized(u: &CentralizedRow, v: &CentralizedRow) -> Option<f64> {
    if u.norm == 0.0 || v.norm == 0.0 {
        return None;
    }
    let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    Some((dot / (u.norm * v.norm)).clamp(-1.0, 1.0))
}

/// The K sampled representative rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSet {
    /// Sorted, distinct row indices; all point at nonconstant rows.
    pub indices: Vec<usize>,
    pub seed: u64,
    pub per_layer_counts: BTreeMap<String, usize>,
}

/// Sample K distinct nonconstant rows.
///
/// When K/2 exceeds the layer count, a budget of floor(K / (2*layers)) rows
/// is drawn uniformly inside each layer so every layer is represented, and
/// the remaining ~K/2 are drawn uniformly over the whole matrix. Otherwise
/// all K rows are drawn uniformly. Constant rows are rejected and redrawn.
pub fn sample_representatives(m: &SnapshotMatrix, k: usize, seed: u64) -> Result<SampleSet> {
    if k == 0 {
        return Err(Error::Config("sample size K must be positive".into()));
    }
    if k > m.n_rows() {
        return Err(Error::Config(format!(
            "sample size K={k} exceeds row count N={}",
            m.n_rows()
        )));
    }
    let constant: Vec<bool> = (0..m.n_rows())
        .map(|i| is_effectively_static(m.row(i)))
        .collect();
    let usable = constant.iter().filter(|&&c| !c).count();
    if usable < k {
        return Err(Error::Degenerate(format!(
            "only {usable} nonconstant rows available, K={k} requested"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; m.n_rows()];

    if usable == k {
        // Fast path; also covers K=N on fully nonconstant matrices.
        for (i, &c) in constant.iter().enumerate() {
            if !c {
                chosen[i] = true;
            }
        }
    } else {
        let mut picked = 0usize;
        let layer_count = m.layers().len();
        if k / 2 > layer_count {
            let quota = k / (2 * layer_count);
            for layer in m.layers() {
                let span = layer.start_row..layer.start_row + layer.row_count;
                let layer_usable = span.clone().filter(|&i| !constant[i]).count();
                let want = quota.min(layer_usable);
                let mut got = 0usize;
                while got < want {
                    let i = rng.random_range(span.clone());
                    if !constant[i] && !chosen[i] {
                        chosen[i] = true;
                        got += 1;
                        picked += 1;
                    }
                }
            }
        }
        while picked < k {
            let i = rng.random_range(0..m.n_rows());
            if !constant[i] && !chosen[i] {
                chosen[i] = true;
                picked += 1;
            }
        }
    }

    let indices: Vec<usize> = chosen
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| c.then_some(i))
        .collect();
    let mut per_layer_counts = BTreeMap::new();
    for &i in &indices {
        *per_layer_counts.entry(m.layer_of_row(i).to_string()).or_insert(0) += 1;
    }
    Ok(SampleSet { indices, seed, per_layer_counts })
}

/// Symmetric K x K correlation matrix of the sampled rows.
#[derive(Debug, Clone)]
pub struct CorrMatrix {
    size: usize,
    data: Vec<f64>,
}

impl CorrMatrix {
    /// Wrap a row-major K x K buffer, validating symmetry and unit diagonal.
    pub fn from_raw(size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size * size {
            return Err(Error::Data(format!(
                "correlation buffer holds {} entries, expected {size}x{size}",
                data.len()
            )));
        }
        for i in 0..size {
            if (data[i * size + i] - 1.0).abs() > 1e-12 {
                return Err(Error::Data(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..i {
                if (data[i * size + j] - data[j * size + i]).abs() > 1e-12 {
                    return Err(Error::Data(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(Self { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    /// Largest pairwise distance 1 - |corr| over distinct sampled rows.
    pub fn max_pairwise_distance(&self) -> f64 {
        let mut d = 0.0f64;
        for i in 0..self.size {
            for j in 0..i {
                d = d.max(1.0 - self.get(i, j).abs());
            }
        }
        d
    }
}

/// Pairwise correlations of the sampled rows. Each pair is computed once and
/// mirrored, so the result is exactly symmetric with a unit diagonal.
pub fn corr_matrix(m: &SnapshotMatrix, sample: &SampleSet) -> Result<CorrMatrix> {
    let k = sample.indices.len();
    let centralized: Vec<CentralizedRow> =
        map_indexed(k, |i| centralize(m.row(sample.indices[i])));
    if let Some(bad) = centralized.iter().position(|c| c.norm == 0.0) {
        return Err(Error::Degenerate(format!(
            "sampled row {} has zero variance",
            sample.indices[bad]
        )));
    }
    // Upper triangle per row, assembled sequentially afterwards.
    let rows: Vec<Vec<f64>> = map_indexed(k, |i| {
        (i + 1..k)
            .map(|j| corr_centralized(&centralized[i], &centralized[j]).unwrap())
            .collect()
    });
    let mut data = vec![0.0; k * k];
    for i in 0..k {
        data[i * k + i] = 1.0;
        for (off, &c) in rows[i].iter().enumerate() {
            let j = i + 1 + off;
            data[i * k + j] = c;
            data[j * k + i] = c;
        }
    }
    CorrMatrix::from_raw(k, data)
}

/// Per-row result of the assignment pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    /// Mode of maximal |corr|, or [`STATIC_MODE`] for zero-variance rows.
    pub mode: i64,
    /// Signed correlation to the winning reference; 0 for static rows.
    pub corr: f64,
}

/// Assign every row of `m` to the reference of maximal absolute correlation.
///
/// Ties break toward the lowest mode id. Zero-variance rows get the static
/// mode. O(N*M*T); rows are processed independently, so the result does not
/// depend on worker count.
pub fn assign_to_modes(m: &SnapshotMatrix, references: &[Vec<f64>]) -> Result<Vec<Assignment>> {
    if references.is_empty() {
        return Err(Error::Config("assignment needs at least one reference".into()));
    }
    let refs: Vec<CentralizedRow> = references.iter().map(|r| centralize(r)).collect();
    if let Some(bad) = refs.iter().position(|c| c.norm == 0.0) {
        return Err(Error::Degenerate(format!("reference {bad} has zero variance")));
    }
    if references.iter().any(|r| r.len() != m.n_epochs()) {
        return Err(Error::Data("reference length differs from matrix epochs".into()));
    }
    Ok(map_indexed(m.n_rows(), |i| {
        let row = m.row(i);
        if is_effectively_static(row) {
            Assignment { mode: STATIC_MODE, corr: 0.0 }
        } else {
            assign_row(&centralize(row), &refs)
        }
    }))
}

pub(crate) fn assign_row(row: &CentralizedRow, refs: &[CentralizedRow]) -> Assignment {
    if row.norm == 0.0 {
        return Assignment { mode: STATIC_MODE, corr: 0.0 };
    }
    let mut best_mode = 0usize;
    let mut best_corr = corr_centralized(row, &refs[0]).unwrap();
    for (j, r) in refs.iter().enumerate().skip(1) {
        let c = corr_centralized(row, r).unwrap();
        if c.abs() > best_corr.abs() {
            best_mode = j;
            best_corr = c;
        }
    }
    Assignment { mode: best_mode as i64, corr: best_corr }
}
