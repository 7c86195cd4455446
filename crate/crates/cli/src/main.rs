//! `cmdkit` — the full decomposition pipeline as deterministic, scriptable
//! subcommands.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numeric
//! divergence, 4 degenerate data, 5 I/O or malformed files. Every run writes
//! a `<output>.manifest.json` sidecar recording the command line, a stable
//! configuration hash, the seed in play and stage timings; given identical
//! flags and seeds, output files are byte-identical for any `--threads`
//! value.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use cmdkit::clustering::{ClusterConfig, Cut};
use cmdkit::decomposition::{decompose_traced, load_model, reconstruct, save_model};
use cmdkit::dmd::{dmd_fit, load_dmd_model, save_dmd_model};
use cmdkit::error::Error;
use cmdkit::generators::{
    evaluate_weights, generate_mlp_training, generate_synthetic_modes, generate_toy_regression,
    MlpTaskConfig, SyntheticModesConfig, ToyRegressionConfig,
};
use cmdkit::report::{build_report, compare, compare_to_csv, report_to_csv, weights_mse};
use cmdkit::trajectory::{load_trajectory, save_trajectory, SnapshotMatrix};

use manifest::RunManifest;

/// Fixed default seed: reproducibility by default, never entropy.
const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "cmdkit", version, about = "Correlation mode decomposition of training trajectories")]
struct Cli {
    /// Cap worker parallelism; falls back to the CMDKIT_THREADS variable.
    /// Outputs are identical for any thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum GenerateKind {
    /// Gradient descent on a linear regression (JSON: ToyRegressionConfig).
    ToyRegression,
    /// Plain full-batch GD on a tiny fully-connected classifier.
    Mlp,
    /// Exact affine images of a few base profiles, interleaved.
    SyntheticModes,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a ground-truth trajectory from a JSON configuration.
    Generate {
        #[arg(value_enum)]
        kind: GenerateKind,
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decompose a trajectory into correlation modes.
    Decompose {
        trajectory: PathBuf,
        /// Cut the dendrogram at a fixed mode count.
        #[arg(long)]
        modes: Option<usize>,
        /// Cut at a cophenetic distance threshold in (0, 1]. Default when
        /// neither flag is given: half the maximal pairwise distance.
        #[arg(long, conflicts_with = "modes")]
        threshold: Option<f64>,
        /// Number of sampled representative weights (K).
        #[arg(long, default_value_t = 1000)]
        sample: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Keep only epochs E..=T before fitting.
        #[arg(long, value_name = "EPOCH")]
        truncate_from: Option<usize>,
        /// Keep every F-th epoch before fitting.
        #[arg(long, value_name = "FACTOR", conflicts_with = "truncate_from")]
        subsample: Option<usize>,
        /// Diagnostic correlation slack for the report.
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        /// Model output path; the report lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild a trajectory from a decomposition model.
    Reconstruct {
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the exponential (DMD) baseline.
    Dmd {
        trajectory: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruction-error report for a trajectory/reconstruction pair.
    Report {
        trajectory: PathBuf,
        reconstruction: PathBuf,
        /// Attach per-mode statistics from this model.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate classifier weights at every stored epoch.
    Evaluate {
        trajectory: PathBuf,
        task_config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a decomposition model against a DMD baseline.
    Compare {
        trajectory: PathBuf,
        cmd_model: PathBuf,
        dmd_model: PathBuf,
        /// Attach task metrics (final test accuracy) from this config.
        #[arg(long)]
        task_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(threads_from_env);
    match run_with_threads(threads, || run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn threads_from_env() -> Option<usize> {
    std::env::var("CMDKIT_THREADS").ok()?.parse().ok()
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Divergence { .. } | Error::Numeric(_) => 3,
        Error::Degenerate(_) => 4,
        Error::Io(_) | Error::Format(_) | Error::Data(_) | Error::LayerIndex(_) | Error::Json(_) => 5,
    }
}

#[cfg(feature = "parallel")]
fn run_with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(t) if t > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .expect("failed to build worker pool")
            .install(f),
        _ => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_with_threads<T>(_threads: Option<usize>, f: impl FnOnce() -> T) -> T {
    f()
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Generate { kind, config, out } => cmd_generate(kind, &config, &out),
        Command::Decompose {
            trajectory,
            modes,
            threshold,
            sample,
            seed,
            truncate_from,
            subsample,
            epsilon,
            out,
        } => cmd_decompose(
            &trajectory,
            modes,
            threshold,
            sample,
            seed,
            truncate_from,
            subsample,
            epsilon,
            &out,
        ),
        Command::Reconstruct { model, out } => cmd_reconstruct(&model, &out),
        Command::Dmd { trajectory, rank, out } => cmd_dmd(&trajectory, rank, &out),
        Command::Report { trajectory, reconstruction, model, out } => {
            cmd_report(&trajectory, &reconstruction, model.as_deref(), &out)
        }
        Command::Evaluate { trajectory, task_config, out } => {
            cmd_evaluate(&trajectory, &task_config, &out)
        }
        Command::Compare { trajectory, cmd_model, dmd_model, task_config, out } => {
            cmd_compare(&trajectory, &cmd_model, &dmd_model, task_config.as_deref(), &out)
        }
    }
}

/// Parse a JSON configuration file; any failure is a configuration error.
fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))
}

fn cmd_generate(kind: GenerateKind, config: &Path, out: &Path) -> Result<(), Error> {
    let started = Instant::now();
    let config_text = std::fs::read_to_string(config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", config.display())))?;
    let mut extra_outputs = Vec::new();
    let (matrix, seed): (SnapshotMatrix, u64) = match kind {
        GenerateKind::ToyRegression => {
            let cfg: ToyRegressionConfig = load_config(config)?;
            (generate_toy_regression(&cfg)?, cfg.seed)
        }
        GenerateKind::Mlp => {
            let cfg: MlpTaskConfig = load_config(config)?;
            let (matrix, log) = generate_mlp_training(&cfg)?;
            // Per-epoch metrics land next to the trajectory.
            let log_path = out.with_extension("log.csv");
            let mut csv =
                String::from("epoch,train_loss,train_accuracy,test_loss,test_accuracy\n");
            for (epoch, rec) in log.iter().enumerate() {
                csv.push_str(&format!(
                    "{epoch},{:?},{:?},{:?},{:?}\n",
                    rec.train_loss, rec.train_accuracy, rec.test_loss, rec.test_accuracy
                ));
            }
            std::fs::write(&log_path, csv)?;
            extra_outputs.push(log_path);
            (matrix, cfg.seed)
        }
        GenerateKind::SyntheticModes => {
            let cfg: SyntheticModesConfig = load_config(config)?;
            (generate_synthetic_modes(&cfg)?.matrix, cfg.seed)
        }
    };
    save_trajectory(&matrix, out)?;

    let mut outputs = vec![out.to_path_buf()];
    outputs.extend(extra_outputs);
    RunManifest::new(seed)
        .with_config_payload(&serde_json::json!({
            "kind": format!("{kind:?}"),
            "config": serde_json::from_str::<serde_json::Value>(&config_text)?,
        }))
        .with_inputs(&[config])
        .with_outputs(&outputs)
        .with_total_ms(started.elapsed().as_secs_f64() * 1e3)
        .write_for(out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_decompose(
    trajectory: &Path,
    modes: Option<usize>,
    threshold: Option<f64>,
    sample: usize,
    seed: u64,
    truncate_from: Option<usize>,
    subsample: Option<usize>,
    epsilon: f64,
    out: &Path,
) -> Result<(), Error> {
    let started = Instant::now();
    let full = load_trajectory(trajectory)?;
    let (matrix, selection) = match (truncate_from, subsample) {
        (Some(e), None) => {
            let (m, sel) = full.truncate_history(e)?;
            (m, Some(sel))
        }
        (None, Some(f)) => {
            let (m, sel) = full.subsample_epochs(f)?;
            (m, Some(sel))
        }
        (None, None) => (full, None),
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };

    let cut = match (modes, threshold) {
        (Some(m), None) => Cut::FixedModes { modes: m },
        (None, Some(t)) => Cut::Threshold { threshold: t },
        (None, None) => Cut::HalfMaxDistance,
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };
    let mut cfg = ClusterConfig::new(cut, seed).with_sample_size(sample);
    cfg.epsilon = epsilon;

    let (mut model, trace) = decompose_traced(&matrix, &cfg)?;
    if let Some(sel) = selection {
        model.epoch_selection = sel;
    }
    save_model(&model, out)?;

    let report = build_report(
        &matrix,
        &model,
        0.95,
        trace.timings,
        trace.sample.per_layer_counts.clone(),
    )?;
    let report_path = out.with_extension("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    let csv_path = out.with_extension("report.csv");
    std::fs::write(&csv_path, report_to_csv(&report))?;

    RunManifest::new(seed)
        .with_config_payload(&serde_json::json!({
            "command": "decompose",
            "cluster_config": &cfg,
            "truncate_from": truncate_from,
            "subsample": subsample,
        }))
        .with_inputs(&[trajectory])
        .with_outputs(&[out, &report_path, &csv_path])
        .with_stage_timings(trace.timings)
        .with_total_ms(started.elapsed().as_secs_f64() * 1e3)
        .write_for(out)?;
    Ok(())
}

fn cmd_reconstruct(model_path: &Path, out: &Path) -> Result<(), Error> {
    let started = Instant::now();
    let model = load_model(model_path)?;
    let matrix = reconstruct(&model)?;
    save_trajectory(&matrix, out)?;
    RunManifest::new(model.config.seed)
        .with_config_payload(&serde_json::json!({ "command": "reconstruct" }))
        .with_inputs(&[model_path])
        .with_outputs(&[out])
        .with_total_ms(started.elapsed().as_secs_f64() * 1e3)
        .write_for(out)?;
    Ok(())
}

fn cmd_dmd(trajectory: &Path, rank: usize, out: &Path) -> Result<(), Error> {
    let started = Instant::now();
    let matrix = load_trajectory(trajectory)?;
    let model = dmd_fit(&matrix, rank)?;
    if model.rank < model.requested_rank {
        eprintln!(
            "warning: rank shrunk from {} to the numerical rank {}",
            model.requested_rank, model.rank
        );
    }
    save_dmd_model(&model, out)?;
    RunManifest::new(DEFAULT_SEED)
        .with_config_payload(&serde_json::json!({ "command": "dmd", "rank": rank }))
        .with_inputs(&[trajectory])
        .with_outputs(&[out])
        .with_total_ms(started.elapsed().as_secs_f64() * 1e3)
        .write_for(out)?;
    Ok(())
}

#[derive(serde::Serialize)]
struct ReportDocument {
    /// Mean squared difference between the two trajectory files.
    weights_mse: f64,
    /// Full per-mode report when a model was supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    decomposition: Option<cmdkit::report::DecompositionReport>,
}

fn cmd_report(
    trajectory: &Path,
    reconstruction: &Path,
    model: Option<&Path>,
    out: &Path,
) -> Result<(), Error> {
    let started = Instant::now();
    let w = load_trajectory(trajectory)?;
    let w_hat = load_trajectory(reconstruction)?;
    let mse = weights_mse(&w, &w_hat)?;
    let decomposition = match model {
        Some(path) => {
            let model = load_model(path)?;
            Some(build_report(
                &w,
                &model,
                0.95,
                Default::default(),
                Default::default(),
            )?)
        }
        None => None,
    };
    let doc = ReportDocument { weights_mse: mse, decomposition };
    std::fs::write(out, serde_json::to_string_pretty(&doc)?)?;

    let csv_path = out.with_extension("csv");
    let mut csv = String::from("metric,mode,layer,epoch,value\n");
    csv.push_str(&format!("weights_mse,,,,{mse:?}\n"));
    if let Some(rep) = &doc.decomposition {
        // Skip the duplicated header line of the nested report.
        let nested = report_to_csv(rep);
        csv.push_str(nested.split_once('\n').map(|x| x.1).unwrap_or(""));
    }
    std::fs::write(&csv_path, csv)?;

    let mut inputs: Vec<&Path> = vec![trajectory, reconstruction];
    if let Some(m) = model {
        inputs.push(m);
    }
    RunManifest::new(DEFAULT_SEED)
        .with_config_payload(&serde_json::json!({ "command": "report" }))
        .with_inputs(&inputs)
        .with_outputs(&[out, &csv_path])
        .with_total_ms(started.elapsed().as_secs_f64() * 1e3)
        .write_for(out)?;
    Ok(())
}

fn cmd_evaluate(trajectory: &Path, task_config: &Path, out: &Path) -> Result<(), Error> {
    let started = Instant::now();
    let matrix = load_trajectory(trajectory)?;
    let cfg: MlpTaskConfig = load_config(task_config)?;
    let mut csv = String::from("epoch,train_loss,train_accuracy,test_loss,test_accuracy\n");
    for epoch in 0..matrix.n_epochs() {
        let rec = evaluate_weights(&cfg, &matrix, epoch)?;
        csv.push_str(&format!(
            "{epoch},{:?},{:?},{:?},{:?}\n",
            rec.train_loss, rec.train_accuracy, rec.test_loss, rec.test_accuracy
        ));
    }
    std::fs::write(out, csv)?;
    RunManifest::new(cfg.seed)
        .with_config_payload(&serde_json::json!({ "command": "evaluate", "task": &cfg }))
        .with_inputs(&[trajectory, task_config])
        .with_outputs(&[out])
        .with_total_ms(started.elapsed().as_secs_f64() * 1e3)
        .write_for(out)?;
    Ok(())
}

fn cmd_compare(
    trajectory: &Path,
    cmd_model_path: &Path,
    dmd_model_path: &Path,
    task_config: Option<&Path>,
    out: &Path,
) -> Result<(), Error> {
    let started = Instant::now();
    let w = load_trajectory(trajectory)?;
    let cmd_model = load_model(cmd_model_path)?;
    let dmd_model = load_dmd_model(dmd_model_path)?;
    let task: Option<MlpTaskConfig> = match task_config {
        Some(path) => Some(load_config(path)?),
        None => None,
    };
    // Shape guard up front so mismatched artifacts fail with a clear message.
    if cmd_model.n_rows() != w.n_rows() || dmd_model.n_rows != w.n_rows() {
        return Err(Error::Data(format!(
            "row counts disagree: trajectory {}, cmd model {}, dmd model {}",
            w.n_rows(),
            cmd_model.n_rows(),
            dmd_model.n_rows
        )));
    }
    let rows = compare(&w, &cmd_model, &dmd_model, task.as_ref())?;
    std::fs::write(out, compare_to_csv(&rows))?;

    let mut inputs: Vec<&Path> = vec![trajectory, cmd_model_path, dmd_model_path];
    if let Some(t) = task_config {
        inputs.push(t);
    }
    RunManifest::new(DEFAULT_SEED)
        .with_config_payload(&serde_json::json!({ "command": "compare" }))
        .with_inputs(&inputs)
        .with_outputs(&[out])
        .with_total_ms(started.elapsed().as_secs_f64() * 1e3)
        .write_for(out)?;
    Ok(())
}
