//! Cross-module pipeline tests on generated dynamics.

use cmdkit::clustering::{ClusterConfig, Cut};
use cmdkit::decomposition::{decompose, reconstruct};
use cmdkit::generators::{
    evaluate_weights, generate_mlp_training, MlpTaskConfig, PointCloudSpec,
};
use cmdkit::report::weights_mse;

fn small_task() -> MlpTaskConfig {
    MlpTaskConfig {
        layer_widths: vec![2, 32, 16, 2],
        epochs: 100,
        learning_rate: 0.05,
        dataset: PointCloudSpec { count: 300, noise: 0.5, seed: 77 },
        seed: 13,
    }
}

// The default threshold cut lands on a similar mode count regardless of
// which rows were sampled; the count itself is data-dependent.
#[test]
fn threshold_cut_mode_count_is_stable_across_sampling_seeds() {
    let (w, _) = generate_mlp_training(&small_task()).unwrap();
    let mut counts = Vec::new();
    for seed in [1u64, 2, 3] {
        let cfg = ClusterConfig::new(Cut::HalfMaxDistance, seed).with_sample_size(300);
        let model = decompose(&w, &cfg).unwrap();
        counts.push(model.mode_count);
    }
    let max = *counts.iter().max().unwrap();
    let min = *counts.iter().min().unwrap();
    assert!(
        max - min <= 2,
        "mode counts vary too much across sampling seeds: {counts:?}"
    );
    assert!(min >= 2, "threshold cut collapsed to a single mode: {counts:?}");
}

// Reconstructed weights track the trained network on the task metrics, and
// the reconstruction error is far below the weight scale.
#[test]
fn mlp_reconstruction_tracks_training_metrics() {
    let task = small_task();
    let (w, log) = generate_mlp_training(&task).unwrap();
    let cfg = ClusterConfig::new(Cut::FixedModes { modes: 8 }, 5).with_sample_size(300);
    let model = decompose(&w, &cfg).unwrap();
    let rec = reconstruct(&model).unwrap();

    let mse = weights_mse(&w, &rec).unwrap();
    let scale: f64 =
        w.values().iter().map(|v| v * v).sum::<f64>() / w.values().len() as f64;
    assert!(mse < 1e-3 * scale, "mse {mse:e} vs mean square weight {scale:e}");

    let gd = log.last().unwrap();
    let cmd = evaluate_weights(&task, &rec, rec.n_epochs() - 1).unwrap();
    assert!(
        (cmd.test_accuracy - gd.test_accuracy).abs() <= 0.03,
        "cmd {} vs gd {}",
        cmd.test_accuracy,
        gd.test_accuracy
    );
}
