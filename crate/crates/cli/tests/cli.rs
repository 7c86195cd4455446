//! End-to-end tests of the binary: exit codes, file handling, determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cmdkit::trajectory::load_trajectory;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cmdkit"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_synth_config(dir: &Path, n: usize, t: usize, noise: f64, seed: u64) -> PathBuf {
    let path = dir.join("synth.json");
    std::fs::write(
        &path,
        format!(
            r#"{{"n": {n}, "t": {t}, "m_true": 3,
                "profile_kinds": ["exponential-decay", "piecewise-linear", "oscillatory"],
                "a_range": [0.5, 2.0], "b_range": [-1.0, 1.0],
                "noise_sigma": {noise}, "seed": {seed}}}"#
        ),
    )
    .unwrap();
    path
}

fn write_toy_config(dir: &Path) -> PathBuf {
    let path = dir.join("toy.json");
    std::fs::write(
        &path,
        r#"{"d": 2, "m": 3, "n": 8, "eta_schedule": [0.02], "augmented": false,
            "epochs": 40, "seed": 5, "init_scale": 1.0}"#,
    )
    .unwrap();
    path
}

#[test]
fn generate_toy_regression_has_d_times_m_rows() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_config(dir.path());
    assert_ok(&run(&["generate", "toy-regression", "toy.json", "--out", "t.cmdt"], dir.path()));
    let m = load_trajectory(dir.path().join("t.cmdt")).unwrap();
    assert_eq!(m.n_rows(), 6);
    assert_eq!(m.n_epochs(), 41);
    assert!(dir.path().join("t.cmdt.manifest.json").exists());
}

#[test]
fn repeated_generation_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_config(dir.path());
    assert_ok(&run(&["generate", "toy-regression", "toy.json", "--out", "a.cmdt"], dir.path()));
    assert_ok(&run(&["generate", "toy-regression", "toy.json", "--out", "b.cmdt"], dir.path()));
    let a = std::fs::read(dir.path().join("a.cmdt")).unwrap();
    let b = std::fs::read(dir.path().join("b.cmdt")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn bad_config_json_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{not json").unwrap();
    let out = run(&["generate", "mlp", "bad.json", "--out", "t.cmdt"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn unknown_config_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"d": 1, "m": 1, "n": 1, "eta_schedule": [0.1], "augmented": false,
            "epochs": 4, "seed": 1, "init_scale": 1.0, "extra_field": 3}"#,
    )
    .unwrap();
    let out = run(&["generate", "toy-regression", "bad.json", "--out", "t.cmdt"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergent_generation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("tnt.json"),
        r#"{"d": 1, "m": 1, "n": 1, "eta_schedule": [1e6], "augmented": false,
            "epochs": 200, "seed": 1, "init_scale": 1.0}"#,
    )
    .unwrap();
    let out = run(&["generate", "toy-regression", "tnt.json", "--out", "t.cmdt"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn modes_and_threshold_conflict_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_synth_config(dir.path(), 100, 20, 0.0, 3);
    assert_ok(&run(
        &["generate", "synthetic-modes", cfg.to_str().unwrap(), "--out", "t.cmdt"],
        dir.path(),
    ));
    let out = run(
        &["decompose", "t.cmdt", "--modes", "3", "--threshold", "0.4", "--out", "m.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn degenerate_data_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    // CSV with mostly constant rows: fewer nonconstant rows than K.
    let mut csv = String::from("weight_id,epoch_0,epoch_1,epoch_2\n");
    for i in 0..20 {
        if i < 3 {
            csv.push_str(&format!("{i},0.0,{i}.5,1.0\n"));
        } else {
            csv.push_str(&format!("{i},1.0,1.0,1.0\n"));
        }
    }
    std::fs::write(dir.path().join("flat.csv"), csv).unwrap();
    let out = run(
        &["decompose", "flat.csv", "--modes", "2", "--sample", "10", "--out", "m.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn missing_input_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["decompose", "missing.cmdt", "--out", "m.json"], dir.path());
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn reconstruct_after_decompose_reports_tiny_mse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_synth_config(dir.path(), 500, 40, 0.0, 9);
    assert_ok(&run(
        &["generate", "synthetic-modes", cfg.to_str().unwrap(), "--out", "t.cmdt"],
        dir.path(),
    ));
    assert_ok(&run(
        &["decompose", "t.cmdt", "--modes", "3", "--sample", "60", "--seed", "1", "--out", "m.json"],
        dir.path(),
    ));
    assert_ok(&run(&["reconstruct", "m.json", "--out", "r.cmdt"], dir.path()));
    assert_ok(&run(&["report", "t.cmdt", "r.cmdt", "--out", "rep.json"], dir.path()));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rep.json")).unwrap())
            .unwrap();
    let mse = doc["weights_mse"].as_f64().unwrap();
    assert!(mse <= 1e-18, "mse = {mse:e}");
}

#[test]
fn report_on_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_synth_config(dir.path(), 50, 12, 0.1, 2);
    assert_ok(&run(
        &["generate", "synthetic-modes", cfg.to_str().unwrap(), "--out", "t.cmdt"],
        dir.path(),
    ));
    assert_ok(&run(&["report", "t.cmdt", "t.cmdt", "--out", "rep.json"], dir.path()));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rep.json")).unwrap())
            .unwrap();
    assert_eq!(doc["weights_mse"].as_f64().unwrap(), 0.0);
    assert!(dir.path().join("rep.csv").exists());
}

#[test]
fn compare_emits_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_synth_config(dir.path(), 200, 30, 0.0, 4);
    assert_ok(&run(
        &["generate", "synthetic-modes", cfg.to_str().unwrap(), "--out", "t.cmdt"],
        dir.path(),
    ));
    assert_ok(&run(
        &["decompose", "t.cmdt", "--modes", "3", "--sample", "40", "--out", "m.json"],
        dir.path(),
    ));
    assert_ok(&run(&["dmd", "t.cmdt", "--rank", "3", "--out", "d.json"], dir.path()));
    assert_ok(&run(
        &["compare", "t.cmdt", "m.json", "d.json", "--out", "table.csv"],
        dir.path(),
    ));
    let table = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("cmd,3,"));
    assert!(lines[2].starts_with("dmd,3,"));
}

#[test]
fn subsample_flag_is_recorded_in_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_synth_config(dir.path(), 100, 100, 0.0, 6);
    assert_ok(&run(
        &["generate", "synthetic-modes", cfg.to_str().unwrap(), "--out", "t.cmdt"],
        dir.path(),
    ));
    assert_ok(&run(
        &["decompose", "t.cmdt", "--modes", "3", "--sample", "30", "--subsample", "2", "--out", "m.json"],
        dir.path(),
    ));
    let model = cmdkit::decomposition::load_model(dir.path().join("m.json")).unwrap();
    assert_eq!(model.n_epochs(), 51);
    assert_eq!(model.epoch_selection.retained_epochs.len(), 51);
    assert_eq!(model.epoch_selection.retained_epochs[1], 2);
}

#[test]
fn evaluate_writes_one_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let task = dir.path().join("task.json");
    std::fs::write(
        &task,
        r#"{"layer_widths": [2, 8, 2], "epochs": 20, "learning_rate": 0.05,
            "dataset": {"count": 60, "noise": 0.3, "seed": 3}, "seed": 4}"#,
    )
    .unwrap();
    assert_ok(&run(&["generate", "mlp", "task.json", "--out", "t.cmdt"], dir.path()));
    assert!(dir.path().join("t.log.csv").exists());
    assert_ok(&run(&["evaluate", "t.cmdt", "task.json", "--out", "metrics.csv"], dir.path()));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 22); // header + 21 epochs
}

#[test]
fn inputs_are_never_mutated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_synth_config(dir.path(), 80, 16, 0.0, 8);
    assert_ok(&run(
        &["generate", "synthetic-modes", cfg.to_str().unwrap(), "--out", "t.cmdt"],
        dir.path(),
    ));
    let before = std::fs::read(dir.path().join("t.cmdt")).unwrap();
    assert_ok(&run(
        &["decompose", "t.cmdt", "--modes", "3", "--sample", "20", "--out", "m.json"],
        dir.path(),
    ));
    assert_ok(&run(&["dmd", "t.cmdt", "--rank", "2", "--out", "d.json"], dir.path()));
    let after = std::fs::read(dir.path().join("t.cmdt")).unwrap();
    assert_eq!(before, after);
}

#[test]
fn manifest_hash_is_stable_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_config(dir.path());
    assert_ok(&run(&["generate", "toy-regression", "toy.json", "--out", "a.cmdt"], dir.path()));
    assert_ok(&run(&["generate", "toy-regression", "toy.json", "--out", "b.cmdt"], dir.path()));
    let read_hash = |name: &str| -> String {
        let doc: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(name)).unwrap(),
        )
        .unwrap();
        doc["config_hash"].as_str().unwrap().to_string()
    };
    let ha = read_hash("a.cmdt.manifest.json");
    let hb = read_hash("b.cmdt.manifest.json");
    assert_eq!(ha, hb);
    assert_eq!(ha.len(), 64);
}
