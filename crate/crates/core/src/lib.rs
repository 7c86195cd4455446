//! Correlation mode decomposition of training trajectories.
//!
//! A trained model's weight snapshots form an N x (T+1) matrix: one row per
//! scalar parameter, one column per epoch. Many rows evolve in lockstep up
//! to scale and offset. This crate clusters a small sample of rows into
//! highly correlated modes, assigns every remaining row to the mode whose
//! reference trajectory it tracks best, and models each row as an affine
//! image of its reference — a drastic compression of the training dynamics
//! that, unlike exponential-mode baselines, follows whatever profile the
//! data actually exhibits.
//!
//! The pieces:
//!
//! * [`trajectory`] — the snapshot matrix, its binary/CSV formats and the
//!   epoch-axis transformations (history truncation, subsampling).
//! * [`generators`] — desk-scale ground-truth dynamics: linear-regression
//!   gradient descent (optionally with per-epoch data redrawing), a tiny
//!   fully-connected classifier, and a synthetic exact-mode generator.
//! * [`correlation`] — centralization, correlation, representative sampling
//!   and the linear-complexity assignment pass.
//! * [`clustering`] — complete-linkage clustering on 1 - |corr| with
//!   fixed-count and distance-threshold cuts.
//! * [`decomposition`] — the end-to-end pipeline and the affine fits.
//! * [`dmd`] — the exact dynamic-mode-decomposition baseline.
//! * [`report`] — reconstruction error, confidence bands, mode histograms
//!   and comparison tables.
//!
//! With the default `parallel` feature the assignment, correlation and
//! fitting passes fan out over rayon; results are bit-identical for any
//! worker count, and for the sequential fallback build.

pub mod clustering;
pub mod correlation;
pub mod decomposition;
pub mod dmd;
pub mod error;
pub mod exec;
pub mod generators;
pub mod report;
pub mod trajectory;

pub use clustering::{ClusterConfig, Cut, Dendrogram, DEFAULT_EPSILON, DEFAULT_SAMPLE_SIZE};
pub use correlation::{SampleSet, STATIC_MODE};
pub use decomposition::{
    decompose, decompose_traced, load_model, reconstruct, reconstruct_with_reference_source,
    save_model, DecomposeTrace, ModeModel, StageTimings,
};
pub use dmd::{dmd_fit, dmd_reconstruct, load_dmd_model, save_dmd_model, DmdModel};
pub use error::{Error, Result};
pub use generators::{
    evaluate_weights, generate_mlp_training, generate_synthetic_modes, generate_toy_regression,
    EvalRecord, MlpTaskConfig, PointCloudSpec, ProfileKind, SyntheticModesConfig,
    ToyRegressionConfig,
};
pub use report::{
    build_report, compare, compare_to_csv, confidence_bands, mode_distribution, report_to_csv,
    weights_mse, CompareRow, DecompositionReport,
};
pub use trajectory::{
    load_trajectory, save_trajectory, EpochSelection, LayerSpan, SnapshotMatrix,
};
