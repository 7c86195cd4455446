//! Exact dynamic mode decomposition with rank truncation, the comparison
//! baseline for the correlation model.
//!
//! The snapshot pairs X = W[:, 0..T-1], X' = W[:, 1..T] feed a rank-r
//! truncated SVD of X; the reduced operator U_r^T X' V_r S_r^{-1} is
//! eigendecomposed, modes are lifted back through X' V_r S_r^{-1}, and
//! amplitudes come from a least-squares fit of the initial snapshot. The
//! reconstruction is `w_i(k) = Re( sum_j alpha_j phi_j(i) lambda_j^k )`:
//! every trajectory is a combination of complex exponentials, which is
//! exactly the model class the correlation decomposition is compared against.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::trajectory::SnapshotMatrix;

type C64 = Complex<f64>;

/// Rank-truncated eigendecomposition of the estimated evolution operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DmdModel {
    /// Rank requested by the caller.
    pub requested_rank: usize,
    /// Effective rank actually used (shrunk to the numerical rank).
    pub rank: usize,
    pub n_rows: usize,
    /// Epoch count (T+1) of the fitted trajectory.
    pub fit_epochs: usize,
    pub eigenvalues: Vec<C64>,
    pub amplitudes: Vec<C64>,
    /// Mode vectors, mode-major: mode j occupies `[j*n_rows, (j+1)*n_rows)`.
    pub modes: Vec<C64>,
}

impl DmdModel {
    pub fn mode(&self, j: usize) -> &[C64] {
        &self.modes[j * self.n_rows..(j + 1) * self.n_rows]
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.rank > self.requested_rank {
            return Err(Error::Format(format!(
                "effective rank {} inconsistent with requested {}",
                self.rank, self.requested_rank
            )));
        }
        if self.eigenvalues.len() != self.rank
            || self.amplitudes.len() != self.rank
            || self.modes.len() != self.rank * self.n_rows
        {
            return Err(Error::Format("model component counts disagree with rank".into()));
        }
        let finite = |c: &C64| c.re.is_finite() && c.im.is_finite();
        if !self.eigenvalues.iter().all(finite)
            || !self.amplitudes.iter().all(finite)
            || !self.modes.iter().all(finite)
        {
            return Err(Error::Data("model holds non-finite components".into()));
        }
        Ok(())
    }
}

/// Fit a rank-r model to the trajectory. If r exceeds the numerical rank of
/// the snapshot matrix the rank shrinks (recorded via `requested_rank`).
pub fn dmd_fit(m: &SnapshotMatrix, r: usize) -> Result<DmdModel> {
    let n = m.n_rows();
    let t = m.last_epoch();
    if r == 0 || r > n.min(t) {
        return Err(Error::Config(format!(
            "rank must lie in 1..=min(N, T) = {}, got {r}",
            n.min(t)
        )));
    }
    let x = DMatrix::from_fn(n, t, |i, k| m.value(i, k));
    let xp = DMatrix::from_fn(n, t, |i, k| m.value(i, k + 1));

    let svd = x.svd(true, true);
    let u = svd.u.as_ref().ok_or_else(|| Error::Numeric("SVD did not produce U".into()))?;
    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::Numeric("SVD did not produce V^T".into()))?;
    let sigma = &svd.singular_values;

    // Singular values sorted descending (defensive: sort an index permutation).
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap());
    let sigma_max = sigma[order[0]];
    let tol = sigma_max * n.max(t) as f64 * f64::EPSILON;
    let numerical_rank = order.iter().filter(|&&i| sigma[i] > tol).count();
    if numerical_rank == 0 {
        return Err(Error::Numeric("snapshot matrix is numerically zero".into()));
    }
    let rank = r.min(numerical_rank);

    let u_r = DMatrix::from_fn(n, rank, |i, j| u[(i, order[j])]);
    let v_r = DMatrix::from_fn(t, rank, |i, j| v_t[(order[j], i)]);
    let sigma_inv = DMatrix::from_fn(rank, rank, |i, j| {
        if i == j { 1.0 / sigma[order[i]] } else { 0.0 }
    });

    // Reduced operator and the lift for exact modes.
    let lift = &xp * &v_r * &sigma_inv; // N x rank
    let a_reduced = u_r.transpose() * &lift; // rank x rank

    let eigenvalues: Vec<C64> = a_reduced.complex_eigenvalues().iter().copied().collect();
    let eigenvectors = reduced_eigenvectors(&a_reduced, &eigenvalues)?;

    // Exact modes: phi_j = X' V S^{-1} y_j / lambda_j, falling back to the
    // projected form U y_j when the eigenvalue vanishes.
    let lift_c = lift.map(C64::from);
    let u_c = u_r.map(C64::from);
    let mut modes = Vec::with_capacity(rank * n);
    for (j, y) in eigenvectors.iter().enumerate() {
        let lam = eigenvalues[j];
        let phi = if lam.norm() > 1e-12 {
            (&lift_c * y) / lam
        } else {
            &u_c * y
        };
        modes.extend(phi.iter().copied());
    }

    // Amplitudes: least-squares fit of snapshot 0 onto the modes.
    let phi_matrix = DMatrix::from_fn(n, rank, |i, j| modes[j * n + i]);
    let w0 = DVector::from_fn(n, |i, _| C64::from(m.value(i, 0)));
    let phi_svd = phi_matrix.svd(true, true);
    let amp = phi_svd
        .solve(&w0, f64::EPSILON * n.max(rank) as f64)
        .map_err(|e| Error::Numeric(format!("amplitude fit failed: {e}")))?;
    let amplitudes: Vec<C64> = amp.iter().copied().collect();

    let model = DmdModel {
        requested_rank: r,
        rank,
        n_rows: n,
        fit_epochs: m.n_epochs(),
        eigenvalues,
        amplitudes,
        modes,
    };
    model.validate()?;
    Ok(model)
}

/// Eigenvectors of the reduced operator by inverse iteration at each computed
/// eigenvalue, with a deterministic phase (largest-modulus entry made real
/// positive).
fn reduced_eigenvectors(a: &DMatrix<f64>, eigenvalues: &[C64]) -> Result<Vec<DVector<C64>>> {
    let dim = a.nrows();
    let a_c = a.map(C64::from);
    let a_norm = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let mut out = Vec::with_capacity(eigenvalues.len());
    for &lam in eigenvalues {
        let mut best: Option<(f64, DVector<C64>)> = None;
        'starts: for start in 0..=dim {
            // Start 0 is the all-ones vector; start s>0 is the basis vector
            // e_{s-1}. Distinct starts matter only for (near-)repeated
            // eigenvalues.
            let mut v: DVector<C64> = if start == 0 {
                DVector::from_element(dim, C64::new(1.0, 0.0))
            } else {
                DVector::from_fn(dim, |i, _| {
                    if i == start - 1 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }
                })
            };
            v /= C64::from(v.norm());
            // A shift exactly on the eigenvalue can make LU fail; nudge it.
            for attempt in 0..3 {
                let shift = lam + C64::new(a_norm * 1e-14 * attempt as f64, 0.0);
                let mut shifted = a_c.clone();
                for i in 0..dim {
                    shifted[(i, i)] -= shift;
                }
                let lu = shifted.lu();
                let mut ok = true;
                for _ in 0..2 {
                    match lu.solve(&v) {
                        Some(w) => {
                            let norm = w.norm();
                            if norm.is_finite() && norm > 0.0 {
                                v = w / C64::from(norm);
                            } else {
                                ok = false;
                                break;
                            }
                        }
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if !ok {
                    continue;
                }
                let residual = (&a_c * &v - &v * lam).norm();
                if best.as_ref().map_or(true, |(r, _)| residual < *r) {
                    best = Some((residual, v.clone()));
                }
                if residual <= a_norm * 1e-10 {
                    break 'starts;
                }
                break; // next start vector
            }
        }
        let (residual, mut v) = best.ok_or_else(|| {
            Error::Numeric(format!("no eigenvector converged for eigenvalue {lam}"))
        })?;
        if residual > a_norm * 1e-6 {
            return Err(Error::Numeric(format!(
                "eigenvector residual {residual:e} too large for eigenvalue {lam}"
            )));
        }
        // Deterministic phase: the first entry of maximal modulus becomes
        // real and positive.
        let pivot = (0..dim)
            .max_by(|&i, &j| v[i].norm().partial_cmp(&v[j].norm()).unwrap())
            .unwrap();
        let phase = v[pivot] / C64::from(v[pivot].norm());
        v /= phase;
        out.push(v);
    }
    Ok(out)
}

/// Flags raised while reconstructing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DmdReconstructionFlags {
    /// An eigenvalue power overflowed and was clamped.
    pub overflow: bool,
    /// Largest |imaginary part| seen before taking the real part.
    pub max_imaginary_residue: f64,
}

/// Magnitude cap for eigenvalue powers; larger values are clamped and
/// flagged rather than propagated as infinities.
const POWER_CLAMP: f64 = 1e150;

/// Evaluate the fitted exponential model at epochs 0..epochs-1.
///
/// Output rows carry a single synthetic layer "all"; the model stores no
/// layer index.
pub fn dmd_reconstruct(
    model: &DmdModel,
    epochs: usize,
) -> Result<(SnapshotMatrix, DmdReconstructionFlags)> {
    model.validate()?;
    if epochs < 2 {
        return Err(Error::Config("reconstruction needs at least two epochs".into()));
    }
    let mut flags = DmdReconstructionFlags::default();
    // Power table, mode-major; clamped magnitudes flag the run.
    let mut powers = vec![C64::new(0.0, 0.0); model.rank * epochs];
    for (j, &lam) in model.eigenvalues.iter().enumerate() {
        let mut p = C64::new(1.0, 0.0);
        for k in 0..epochs {
            powers[j * epochs + k] = p;
            p *= lam;
            if p.norm() > POWER_CLAMP {
                p = p / C64::from(p.norm()) * C64::from(POWER_CLAMP);
                flags.overflow = true;
            }
        }
    }

    let n = model.n_rows;
    let rows: Vec<(Vec<f64>, f64)> = map_indexed(n, |i| {
        let mut row = vec![0.0; epochs];
        let mut max_imag = 0.0f64;
        for k in 0..epochs {
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..model.rank {
                acc += model.amplitudes[j] * model.modes[j * n + i] * powers[j * epochs + k];
            }
            max_imag = max_imag.max(acc.im.abs());
            row[k] = acc.re.clamp(-POWER_CLAMP, POWER_CLAMP);
        }
        (row, max_imag)
    });
    let mut values = Vec::with_capacity(n * epochs);
    for (row, max_imag) in rows {
        values.extend(row);
        flags.max_imaginary_residue = flags.max_imaginary_residue.max(max_imag);
    }
    let m = SnapshotMatrix::single_layer(values, n, epochs)?;
    Ok((m, flags))
}

// ---------------------------------------------------------------------------
// On-disk format: JSON descriptor plus a binary block for the modes
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ComplexJson {
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct ModesFileRef {
    file: String,
}

#[derive(Serialize, Deserialize)]
struct DmdModelJson {
    r: usize,
    requested_rank: usize,
    n: usize,
    fit_epochs: usize,
    eigenvalues: Vec<ComplexJson>,
    amplitudes: Vec<ComplexJson>,
    modes: ModesFileRef,
}

/// Write the model: `<path>` gets the JSON descriptor, and the mode vectors
/// go to a sibling binary block `<stem>.modes.bin` as little-endian f64
/// (re, im) pairs in mode-major order.
pub fn save_dmd_model(model: &DmdModel, path: impl AsRef<Path>) -> Result<()> {
    model.validate()?;
    let path = path.as_ref();
    let modes_name = modes_file_name(path);
    let doc = DmdModelJson {
        r: model.rank,
        requested_rank: model.requested_rank,
        n: model.n_rows,
        fit_epochs: model.fit_epochs,
        eigenvalues: model.eigenvalues.iter().map(|c| ComplexJson { re: c.re, im: c.im }).collect(),
        amplitudes: model.amplitudes.iter().map(|c| ComplexJson { re: c.re, im: c.im }).collect(),
        modes: ModesFileRef { file: modes_name.clone() },
    };
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &doc)?;
    w.flush()?;

    let block_path = path.with_file_name(&modes_name);
    let mut w = BufWriter::new(File::create(block_path)?);
    for c in &model.modes {
        w.write_all(&c.re.to_le_bytes())?;
        w.write_all(&c.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Load a model written by [`save_dmd_model`].
pub fn load_dmd_model(path: impl AsRef<Path>) -> Result<DmdModel> {
    let path = path.as_ref();
    let doc: DmdModelJson = serde_json::from_reader(BufReader::new(File::open(path)?))
        .map_err(|e| Error::Format(format!("model schema violation: {e}")))?;
    let block_path = path.with_file_name(&doc.modes.file);
    let mut bytes = Vec::new();
    BufReader::new(File::open(block_path)?).read_to_end(&mut bytes)?;
    let expected = doc.r * doc.n * 16;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "modes block holds {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let mut modes = Vec::with_capacity(doc.r * doc.n);
    for chunk in bytes.chunks_exact(16) {
        let re = f64::from_le_bytes(chunk[0..8].try_into().unwrap());
        let im = f64::from_le_bytes(chunk[8..16].try_into().unwrap());
        modes.push(C64::new(re, im));
    }
    let model = DmdModel {
        requested_rank: doc.requested_rank,
        rank: doc.r,
        n_rows: doc.n,
        fit_epochs: doc.fit_epochs,
        eigenvalues: doc.eigenvalues.iter().map(|c| C64::new(c.re, c.im)).collect(),
        amplitudes: doc.amplitudes.iter().map(|c| C64::new(c.re, c.im)).collect(),
        modes,
    };
    model.validate()?;
    Ok(model)
}

fn modes_file_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dmd".into());
    format!("{stem}.modes.bin")
}
