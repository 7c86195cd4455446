//! Metrics and figure-data emitters: reconstruction error, per-mode
//! confidence bands, mode distribution across layers, and the comparison
//! table against the exponential baseline.
//!
//! Everything here is a pure function of immutable inputs and serializes
//! deterministically (maps are ordered), so report files are byte-identical
//! across runs and worker counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::correlation::STATIC_MODE;
use crate::decomposition::{reconstruct, ModeModel, StageTimings};
use crate::dmd::{dmd_reconstruct, DmdModel};
use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::generators::{evaluate_weights, MlpTaskConfig};
use crate::trajectory::SnapshotMatrix;

/// Mean squared difference over all N*(T+1) entries.
pub fn weights_mse(w: &SnapshotMatrix, w_hat: &SnapshotMatrix) -> Result<f64> {
    if w.n_rows() != w_hat.n_rows() || w.n_epochs() != w_hat.n_epochs() {
        return Err(Error::Data(format!(
            "shape mismatch: {}x{} vs {}x{}",
            w.n_rows(),
            w.n_epochs(),
            w_hat.n_rows(),
            w_hat.n_epochs()
        )));
    }
    // Per-row sums in parallel, combined in row order so the result does not
    // depend on the worker count.
    let row_sums: Vec<f64> = map_indexed(w.n_rows(), |i| {
        w.row(i)
            .iter()
            .zip(w_hat.row(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    });
    Ok(row_sums.iter().sum::<f64>() / (w.n_rows() * w.n_epochs()) as f64)
}

/// Empirical per-epoch band of one mode's members mapped into the reference
/// frame by the inverse affine transform (w - b) / a.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeBand {
    pub mode_id: usize,
    /// Set when every member has |a| below 1e-12 and no band exists.
    pub omitted: bool,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Nearest-rank percentile of a sorted slice: the smallest value whose rank
/// is at least ceil(p * n).
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Per-mode confidence bands at the given level (default 0.95).
///
/// Members are normalized into the reference frame before taking empirical
/// percentiles; static rows and members with |a| < 1e-12 are excluded.
pub fn confidence_bands(
    m: &SnapshotMatrix,
    model: &ModeModel,
    level: f64,
) -> Result<Vec<ModeBand>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("level must lie in (0, 1), got {level}")));
    }
    if m.n_rows() != model.n_rows() || m.n_epochs() != model.n_epochs() {
        return Err(Error::Data("matrix shape disagrees with the model".into()));
    }
    let alpha = (1.0 - level) / 2.0;
    let epochs = m.n_epochs();
    let mut bands = Vec::with_capacity(model.mode_count);
    for mode_id in 0..model.mode_count {
        let members: Vec<usize> = (0..m.n_rows())
            .filter(|&i| {
                let w = model.weights[i];
                w.mode == mode_id as i64 && w.a.abs() >= 1e-12
            })
            .collect();
        if members.is_empty() {
            bands.push(ModeBand {
                mode_id,
                omitted: true,
                lower: Vec::new(),
                upper: Vec::new(),
            });
            continue;
        }
        let mut lower = Vec::with_capacity(epochs);
        let mut upper = Vec::with_capacity(epochs);
        let mut normalized = vec![0.0; members.len()];
        for k in 0..epochs {
            for (slot, &i) in members.iter().enumerate() {
                let w = model.weights[i];
                normalized[slot] = (m.value(i, k) - w.b) / w.a;
            }
            normalized.sort_by(|a, b| a.partial_cmp(b).unwrap());
            lower.push(nearest_rank(&normalized, alpha));
            upper.push(nearest_rank(&normalized, 1.0 - alpha));
        }
        bands.push(ModeBand { mode_id, omitted: false, lower, upper });
    }
    Ok(bands)
}

/// Counts per (layer, mode). Static rows are tallied under mode -1.
pub fn mode_distribution(model: &ModeModel) -> BTreeMap<String, BTreeMap<i64, usize>> {
    let mut hist: BTreeMap<String, BTreeMap<i64, usize>> = BTreeMap::new();
    for layer in &model.layers {
        let counts = hist.entry(layer.name.clone()).or_default();
        for row in layer.start_row..layer.start_row + layer.row_count {
            *counts.entry(model.weights[row].mode).or_insert(0) += 1;
        }
    }
    hist
}

/// Size, mean |corr| to the reference and the fraction within 1-epsilon for
/// one mode. The static mode appears with zero correlation statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode_id: i64,
    pub size: usize,
    pub mean_abs_corr: f64,
    pub frac_within_epsilon: f64,
}

/// The full decomposition report. Stage timings are volatile run metadata:
/// they are carried in memory (and land in the run manifest) but stay out of
/// the serialized report so report files are byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub weights_mse: f64,
    pub epsilon: f64,
    /// Frame used for the confidence bands.
    pub ci_frame: String,
    pub ci_level: f64,
    pub per_mode: Vec<ModeSummary>,
    /// layer -> mode id (as a string key) -> count.
    pub per_layer_mode_histogram: BTreeMap<String, BTreeMap<String, usize>>,
    pub ci_bands: Vec<ModeBand>,
    /// Sample diagnostics: rows drawn per layer.
    pub sample_per_layer: BTreeMap<String, usize>,
    #[serde(skip)]
    pub runtime_ms: StageTimings,
}

/// Assemble the report for a fitted model against its source matrix.
pub fn build_report(
    w: &SnapshotMatrix,
    model: &ModeModel,
    level: f64,
    timings: StageTimings,
    sample_per_layer: BTreeMap<String, usize>,
) -> Result<DecompositionReport> {
    let w_hat = reconstruct(model)?;
    let mse = weights_mse(w, &w_hat)?;
    let bands = confidence_bands(w, model, level)?;

    let mut summaries: BTreeMap<i64, (usize, f64, usize)> = BTreeMap::new();
    for entry in &model.weights {
        let slot = summaries.entry(entry.mode).or_insert((0, 0.0, 0));
        slot.0 += 1;
        slot.1 += entry.corr.abs();
        if entry.corr.abs() >= 1.0 - model.config.epsilon {
            slot.2 += 1;
        }
    }
    let per_mode: Vec<ModeSummary> = summaries
        .into_iter()
        .map(|(mode_id, (size, corr_sum, within))| ModeSummary {
            mode_id,
            size,
            mean_abs_corr: if mode_id == STATIC_MODE { 0.0 } else { corr_sum / size as f64 },
            frac_within_epsilon: if mode_id == STATIC_MODE {
                0.0
            } else {
                within as f64 / size as f64
            },
        })
        .collect();
    debug_assert_eq!(per_mode.iter().map(|s| s.size).sum::<usize>(), model.n_rows());

    let histogram = mode_distribution(model)
        .into_iter()
        .map(|(layer, counts)| {
            (
                layer,
                counts.into_iter().map(|(mode, c)| (mode.to_string(), c)).collect(),
            )
        })
        .collect();

    Ok(DecompositionReport {
        weights_mse: mse,
        epsilon: model.config.epsilon,
        ci_frame: "inverse_affine".into(),
        ci_level: level,
        per_mode,
        per_layer_mode_histogram: histogram,
        ci_bands: bands,
        sample_per_layer,
        runtime_ms: timings,
    })
}

/// Long-format CSV (`metric,mode,layer,epoch,value`) for external plotting.
pub fn report_to_csv(report: &DecompositionReport) -> String {
    let mut out = String::from("metric,mode,layer,epoch,value\n");
    out.push_str(&format!("weights_mse,,,,{:?}\n", report.weights_mse));
    for s in &report.per_mode {
        out.push_str(&format!("mode_size,{},,,{}\n", s.mode_id, s.size));
        out.push_str(&format!("mean_abs_corr,{},,,{:?}\n", s.mode_id, s.mean_abs_corr));
        out.push_str(&format!(
            "frac_within_epsilon,{},,,{:?}\n",
            s.mode_id, s.frac_within_epsilon
        ));
    }
    for (layer, counts) in &report.per_layer_mode_histogram {
        for (mode, count) in counts {
            out.push_str(&format!("layer_mode_count,{mode},{layer},,{count}\n"));
        }
    }
    for band in &report.ci_bands {
        if band.omitted {
            continue;
        }
        for (epoch, (lo, hi)) in band.lower.iter().zip(&band.upper).enumerate() {
            out.push_str(&format!("ci_lower,{},,{epoch},{lo:?}\n", band.mode_id));
            out.push_str(&format!("ci_upper,{},,{epoch},{hi:?}\n", band.mode_id));
        }
    }
    out
}

/// One comparison row: a method, its model dimension, reconstruction error
/// and, when the trajectory comes from the classifier task, the final-epoch
/// test accuracy of the reconstructed weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub dimension: usize,
    pub weights_mse: f64,
    pub final_test_accuracy: Option<f64>,
}

/// Compare the correlation model and the exponential baseline on the same
/// trajectory. `task` attaches task metrics when the trajectory came from
/// the built-in classifier generator.
pub fn compare(
    w: &SnapshotMatrix,
    cmd_model: &ModeModel,
    dmd_model: &DmdModel,
    task: Option<&MlpTaskConfig>,
) -> Result<Vec<CompareRow>> {
    let cmd_rec = reconstruct(cmd_model)?;
    let (dmd_rec, _) = dmd_reconstruct(dmd_model, w.n_epochs())?;
    let mut rows = Vec::with_capacity(2);
    for (method, dimension, rec) in [
        ("cmd".to_string(), cmd_model.mode_count, &cmd_rec),
        ("dmd".to_string(), dmd_model.rank, &dmd_rec),
    ] {
        let mse = weights_mse(w, rec)?;
        let final_test_accuracy = match task {
            Some(cfg) => Some(evaluate_weights(cfg, rec, rec.n_epochs() - 1)?.test_accuracy),
            None => None,
        };
        rows.push(CompareRow { method, dimension, weights_mse: mse, final_test_accuracy });
    }
    Ok(rows)
}

/// CSV rendering of the comparison table, one row per method.
pub fn compare_to_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("method,dimension,weights_mse,final_test_accuracy\n");
    for r in rows {
        let acc = r
            .final_test_accuracy
            .map(|a| format!("{a:?}"))
            .unwrap_or_default();
        out.push_str(&format!("{},{},{:?},{acc}\n", r.method, r.dimension, r.weights_mse));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{ClusterConfig, Cut};
    use crate::decomposition::decompose;
    use crate::generators::{generate_synthetic_modes, ProfileKind, SyntheticModesConfig};
    use crate::trajectory::LayerSpan;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrix_from_rows(rows: &[Vec<f64>]) -> SnapshotMatrix {
        let n_epochs = rows[0].len();
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        SnapshotMatrix::single_layer(values, rows.len(), n_epochs).unwrap()
    }

    #[test]
    fn mse_basics() {
        let a = matrix_from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(weights_mse(&a, &a).unwrap(), 0.0);
        let b = matrix_from_rows(&[vec![2.0, 3.0], vec![4.0, 5.0]]);
        assert_eq!(weights_mse(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn mse_matches_brute_force_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.random::<f64>()).collect())
            .collect();
        let b: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.random::<f64>()).collect())
            .collect();
        let ma = matrix_from_rows(&a);
        let mb = matrix_from_rows(&b);
        let mut sum = 0.0;
        for i in 0..3 {
            for k in 0..4 {
                sum += (a[i][k] - b[i][k]).powi(2);
            }
        }
        let expect = sum / 12.0;
        assert!((weights_mse(&ma, &mb).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let a = matrix_from_rows(&[vec![1.0, 2.0]]);
        let b = matrix_from_rows(&[vec![1.0, 2.0, 3.0]]);
        assert!(weights_mse(&a, &b).is_err());
    }

    fn synth(noise: f64, n: usize, t: usize, seed: u64) -> crate::generators::SyntheticModes {
        generate_synthetic_modes(&SyntheticModesConfig {
            n,
            t,
            m_true: 2,
            profile_kinds: vec![ProfileKind::ExponentialDecay, ProfileKind::Oscillatory],
            a_range: (0.5, 2.0),
            b_range: (-1.0, 1.0),
            noise_sigma: noise,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn noise_free_bands_have_zero_width() {
        let out = synth(0.0, 20, 30, 3);
        let cfg = ClusterConfig::new(Cut::FixedModes { modes: 2 }, 1).with_sample_size(8);
        let model = decompose(&out.matrix, &cfg).unwrap();
        let bands = confidence_bands(&out.matrix, &model, 0.95).unwrap();
        for band in &bands {
            assert!(!band.omitted);
            let reference = &model.modes[band.mode_id].reference_values;
            for k in 0..out.matrix.n_epochs() {
                assert!((band.upper[k] - band.lower[k]).abs() < 1e-9);
                // The normalized frame recenters every member on the
                // reference trajectory itself.
                assert!((band.lower[k] - reference[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_member_band_spans_both_values() {
        // Two rows, one mode; the band at each epoch runs between the two
        // normalized member values.
        let rows = vec![
            vec![0.0, 1.0, 2.0, 4.0],
            vec![1.0, 2.9, 4.9, 9.5], // roughly 2x + 1 with wiggle
        ];
        let m = matrix_from_rows(&rows);
        let cfg = ClusterConfig::new(Cut::FixedModes { modes: 1 }, 0).with_sample_size(2);
        let model = decompose(&m, &cfg).unwrap();
        let bands = confidence_bands(&m, &model, 0.95).unwrap();
        assert_eq!(bands.len(), 1);
        for k in 0..m.n_epochs() {
            let w0 = model.weights[0];
            let w1 = model.weights[1];
            let v0 = (m.value(0, k) - w0.b) / w0.a;
            let v1 = (m.value(1, k) - w1.b) / w1.a;
            let (lo, hi) = (v0.min(v1), v0.max(v1));
            assert!((bands[0].lower[k] - lo).abs() < 1e-12);
            assert!((bands[0].upper[k] - hi).abs() < 1e-12);
        }
    }

    // Monte-Carlo check against the known noise level: with |a| = 1 members,
    // the band width approximates 2 * 1.96 * sigma.
    #[test]
    fn gaussian_band_width_tracks_sigma() {
        let sigma = 0.01;
        let out = generate_synthetic_modes(&SyntheticModesConfig {
            n: 1000,
            t: 50,
            m_true: 1,
            profile_kinds: vec![ProfileKind::PiecewiseLinear],
            a_range: (1.0, 1.0),
            b_range: (-0.2, 0.2),
            noise_sigma: sigma,
            seed: 11,
        })
        .unwrap();
        let cfg = ClusterConfig::new(Cut::FixedModes { modes: 1 }, 4).with_sample_size(50);
        let model = decompose(&out.matrix, &cfg).unwrap();
        let bands = confidence_bands(&out.matrix, &model, 0.95).unwrap();
        let widths: Vec<f64> = bands[0]
            .lower
            .iter()
            .zip(&bands[0].upper)
            .map(|(lo, hi)| hi - lo)
            .collect();
        let mean_width = widths.iter().sum::<f64>() / widths.len() as f64;
        let expect = 2.0 * 1.96 * sigma;
        assert!(
            (mean_width - expect).abs() <= 0.15 * expect,
            "width {mean_width} vs {expect}"
        );
    }

    #[test]
    fn band_level_fraction_holds_empirically() {
        let out = synth(0.05, 200, 20, 7);
        let cfg = ClusterConfig::new(Cut::FixedModes { modes: 2 }, 2).with_sample_size(40);
        let model = decompose(&out.matrix, &cfg).unwrap();
        let bands = confidence_bands(&out.matrix, &model, 0.9).unwrap();
        for band in &bands {
            let members: Vec<usize> = (0..out.matrix.n_rows())
                .filter(|&i| model.weights[i].mode == band.mode_id as i64)
                .collect();
            let mut inside = 0usize;
            let mut total = 0usize;
            for k in 0..out.matrix.n_epochs() {
                for &i in &members {
                    let w = model.weights[i];
                    let v = (out.matrix.value(i, k) - w.b) / w.a;
                    total += 1;
                    if v >= band.lower[k] && v <= band.upper[k] {
                        inside += 1;
                    }
                }
            }
            let frac = inside as f64 / total as f64;
            assert!(frac >= 0.88, "coverage {frac}");
        }
    }

    #[test]
    fn histogram_counts_layers_and_static_rows() {
        // Three layers, interleaved modes, one constant row.
        let out = synth(0.0, 30, 12, 5);
        let mut rows: Vec<Vec<f64>> = (0..out.matrix.n_rows())
            .map(|i| out.matrix.row(i).to_vec())
            .collect();
        rows[7] = vec![2.5; out.matrix.n_epochs()];
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        let layers = vec![
            LayerSpan::new("a", 0, 10),
            LayerSpan::new("b", 10, 10),
            LayerSpan::new("c", 20, 10),
        ];
        let m = SnapshotMatrix::new(values, 30, out.matrix.n_epochs(), layers).unwrap();
        let cfg = ClusterConfig::new(Cut::FixedModes { modes: 2 }, 9).with_sample_size(10);
        let model = decompose(&m, &cfg).unwrap();
        let hist = mode_distribution(&model);
        assert_eq!(hist.len(), 3);
        let total: usize = hist.values().flat_map(|c| c.values()).sum();
        assert_eq!(total, 30);
        for (layer, counts) in &hist {
            let layer_total: usize = counts.values().sum();
            assert_eq!(layer_total, 10, "layer {layer}");
            // Interleaved modes appear in every layer.
            assert!(counts.keys().filter(|&&m| m >= 0).count() >= 2, "layer {layer}");
        }
        assert_eq!(hist["a"].get(&STATIC_MODE), Some(&1));
    }

    #[test]
    fn single_layer_histogram_equals_mode_sizes() {
        let out = synth(0.0, 24, 16, 6);
        let cfg = ClusterConfig::new(Cut::FixedModes { modes: 2 }, 3).with_sample_size(8);
        let model = decompose(&out.matrix, &cfg).unwrap();
        let hist = mode_distribution(&model);
        assert_eq!(hist.len(), 1);
        let counts = &hist["all"];
        for mode in 0..model.mode_count as i64 {
            let size = model.weights.iter().filter(|w| w.mode == mode).count();
            assert_eq!(counts.get(&mode), Some(&size));
        }
    }

    #[test]
    fn report_is_deterministic_and_csv_renders() {
        let out = synth(0.01, 40, 20, 8);
        let cfg = ClusterConfig::new(Cut::FixedModes { modes: 2 }, 5).with_sample_size(12);
        let model = decompose(&out.matrix, &cfg).unwrap();
        let report =
            build_report(&out.matrix, &model, 0.95, StageTimings::default(), BTreeMap::new())
                .unwrap();
        let json_a = serde_json::to_string(&report).unwrap();
        let report_b =
            build_report(&out.matrix, &model, 0.95, StageTimings::default(), BTreeMap::new())
                .unwrap();
        assert_eq!(json_a, serde_json::to_string(&report_b).unwrap());
        assert!(!json_a.contains("runtime"));

        let csv = report_to_csv(&report);
        assert!(csv.starts_with("metric,mode,layer,epoch,value\n"));
        assert!(csv.contains("weights_mse"));
        assert!(csv.contains("ci_lower"));
        let sizes: usize = report.per_mode.iter().map(|s| s.size).sum();
        assert_eq!(sizes, out.matrix.n_rows());
    }

    #[test]
    fn compare_emits_one_row_per_method() {
        let out = synth(0.0, 30, 24, 12);
        let cfg = ClusterConfig::new(Cut::FixedModes { modes: 2 }, 1).with_sample_size(10);
        let model = decompose(&out.matrix, &cfg).unwrap();
        let dmd = crate::dmd::dmd_fit(&out.matrix, 2).unwrap();
        let rows = compare(&out.matrix, &model, &dmd, None).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].method, "cmd");
        assert_eq!(rows[1].method, "dmd");
        assert!(rows.iter().all(|r| r.final_test_accuracy.is_none()));
        let csv = compare_to_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
    }

    // Model-class sanity: on data made of exact exponentials the baseline
    // wins or ties; on noise-free affine modes of a piecewise-linear profile
    // the correlation model is exact and the baseline is not.
    #[test]
    fn compare_directions_match_model_classes() {
        // Rank-2 exponential data.
        let rows: Vec<Vec<f64>> = (0..24)
            .map(|i| {
                let c1 = 1.0 + (i as f64 * 0.31).sin();
                let c2 = 0.5 * (i as f64 * 0.17).cos();
                (0..=40)
                    .map(|k| c1 * 0.95f64.powi(k) + c2 * 0.7f64.powi(k))
                    .collect()
            })
            .collect();
        let m = matrix_from_rows(&rows);
        let cfg = ClusterConfig::new(Cut::FixedModes { modes: 2 }, 3).with_sample_size(12);
        let model = decompose(&m, &cfg).unwrap();
        let dmd = crate::dmd::dmd_fit(&m, 2).unwrap();
        let table = compare(&m, &model, &dmd, None).unwrap();
        assert!(table[1].weights_mse <= table[0].weights_mse + 1e-18);

        // Piecewise-linear affine modes.
        let out = generate_synthetic_modes(&SyntheticModesConfig {
            n: 40,
            t: 40,
            m_true: 2,
            profile_kinds: vec![ProfileKind::PiecewiseLinear, ProfileKind::PiecewiseLinear],
            a_range: (0.5, 2.0),
            b_range: (-1.0, 1.0),
            noise_sigma: 0.0,
            seed: 4,
        })
        .unwrap();
        let cfg = ClusterConfig::new(Cut::FixedModes { modes: 2 }, 3).with_sample_size(12);
        let model = decompose(&out.matrix, &cfg).unwrap();
        let dmd = crate::dmd::dmd_fit(&out.matrix, 2).unwrap();
        let table = compare(&out.matrix, &model, &dmd, None).unwrap();
        assert!(table[0].weights_mse < 1e-18);
        assert!(table[0].weights_mse < table[1].weights_mse);
    }
}
