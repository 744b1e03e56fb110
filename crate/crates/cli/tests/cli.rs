//! End-to-end tests of the `dgcformer` binary: exit codes, artifact
//! layout, error prefixes, and determinism of emitted metrics.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dgcformer"))
}

fn write_config(dir: &Path, out_dir: &Path) -> PathBuf {
    let text = format!(
        r#"
dataset = "synthetic"
lookback = 24
horizon = 8
out_dir = "{}"

[patch]
patch_len = 8
stride = 8
d_model = 8
n_heads = 2
n_layers = 1
dropout = 0.0

[train]
lr = 1e-3
pretrain_lr = 1e-2
batch_size = 32
max_epochs = 2
pretrain_epochs = 1
patience = 2
seed = 11
cluster_counts = [2, 3]

[rfl]
hidden = 8
latent = 3

[synthetic]
n_channels = 6
n_groups = 2
steps = 240
seed = 7
noise_std = 0.1

[split.ratios]
train = 0.6
val = 0.2
"#,
        out_dir.display()
    );
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

fn stderr_line(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr)
        .lines()
        .next()
        .unwrap_or_default()
        .to_string()
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

#[test]
fn train_writes_report_checkpoint_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let config = write_config(dir.path(), &out);

    let output = binary().args(["train", "--config"]).arg(&config).output().unwrap();
    assert!(output.status.success(), "stderr: {}", stderr_line(&output));
    assert!(stdout(&output).contains("test mse"));

    let report_path = out.join("synthetic_h8_full_s11_report.json");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["dataset"], "synthetic");
    assert_eq!(report["ablation"], "full");
    assert!(report["epochs"].as_array().unwrap().len() <= 2);
    assert!(report["test_mse"].as_f64().unwrap().is_finite());

    assert!(out.join("synthetic_h8_full_s11.ckpt").exists());
    assert!(out.join("synthetic_h8_full_s11_config.toml").exists());
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 2, "header plus one row: {metrics}");
    assert!(lines[0].starts_with("dataset,"));
    assert!(lines[1].starts_with("synthetic,8,full,11,"));
}

#[test]
fn failures_exit_nonzero_with_error_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");

    // Missing config file.
    let output = binary().args(["train", "--config", "/no/such/config.toml"]).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    let line = stderr_line(&output);
    assert!(line.starts_with("error:"), "{line}");
    assert!(line.contains("/no/such/config.toml"));

    // Dataset CSV that cannot be resolved; the message names the path.
    let config = write_config(dir.path(), &out);
    let output = binary()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--dataset", "nosuchset"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let line = stderr_line(&output);
    assert!(line.starts_with("error:"), "{line}");
    assert!(line.contains("nosuchset.csv"), "{line}");

    // Unknown flag and bad enum value are usage errors, also exit 1.
    let output = binary().args(["train", "--bogus"]).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr_line(&output).starts_with("error:"));
    let output = binary()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--ablation", "nonsense"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr_line(&output).starts_with("error:"));

    // Bad config contents.
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "lookback = 0").unwrap();
    let output = binary().args(["train", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr_line(&output).starts_with("error:"));
}

#[test]
fn ablation_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let config = write_config(dir.path(), &out);

    let output = binary()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--ablation", "ci_only", "--horizon", "4", "--seed", "3"])
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr_line(&output));

    let report_path = out.join("synthetic_h4_ci_only_s3_report.json");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["ablation"], "ci_only");
    assert_eq!(report["seed"], 3);
    assert_eq!(report["horizon"], 4);
    assert_eq!(report["identity_mask_every_epoch"], true);
}

#[test]
fn sweep_emits_grid_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let config = write_config(dir.path(), &out);

    let output = binary()
        .args(["sweep", "--config"])
        .arg(&config)
        .args(["--horizon", "4,8", "--ablation", "full,ci_only", "--seed", "11"])
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr_line(&output));
    let text = stdout(&output);
    assert!(text.contains("horizon"));
    assert!(text.contains("ci_only"));

    let csv = fs::read_to_string(out.join("sweep_table.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "horizon,full_mse,full_mae,ci_only_mse,ci_only_mae");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("4,"));
    assert!(lines[2].starts_with("8,"));

    // One metrics row per run of the Cartesian product.
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 4);
    assert!(out.join("sweep_table.txt").exists());
}

#[test]
fn inspect_clusters_recovers_planted_groups() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let config = write_config(dir.path(), &out);

    let output = binary()
        .args(["inspect-clusters", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr_line(&output));

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("synthetic_clusters.json")).unwrap())
            .unwrap();
    assert_eq!(json["channels"], 6);
    assert_eq!(json["labels"].as_array().unwrap().len(), 6);
    assert_eq!(json["mask"].as_array().unwrap().len(), 6);
    assert_eq!(json["source"], "dtw");
    let ari = json["ari"].as_f64().unwrap();
    assert!(ari >= 0.8, "planted groups should be recovered, ari={ari}");

    let png = fs::read(out.join("synthetic_correlation.png")).unwrap();
    assert!(png.starts_with(&[0x89, b'P', b'N', b'G']));
}

#[test]
fn inspect_clusters_reads_checkpoint_labels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let config = write_config(dir.path(), &out);

    let trained = binary().args(["train", "--config"]).arg(&config).output().unwrap();
    assert!(trained.status.success(), "stderr: {}", stderr_line(&trained));
    let ckpt = out.join("synthetic_h8_full_s11.ckpt");

    let output = binary()
        .args(["inspect-clusters", "--config"])
        .arg(&config)
        .arg("--checkpoint")
        .arg(&ckpt)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr_line(&output));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("synthetic_clusters.json")).unwrap())
            .unwrap();
    assert_eq!(json["source"], "checkpoint");
    assert_eq!(json["labels"].as_array().unwrap().len(), 6);
}

#[test]
fn forecast_plot_draws_window_and_validates_index() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let config = write_config(dir.path(), &out);

    let trained = binary().args(["train", "--config"]).arg(&config).output().unwrap();
    assert!(trained.status.success(), "stderr: {}", stderr_line(&trained));
    let ckpt = out.join("synthetic_h8_full_s11.ckpt");

    let output = binary()
        .args(["forecast-plot", "--config"])
        .arg(&config)
        .arg("--checkpoint")
        .arg(&ckpt)
        .args(["--window", "1", "--channels", "0,3"])
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr_line(&output));
    let png = fs::read(out.join("synthetic_w1_forecast.png")).unwrap();
    assert!(png.starts_with(&[0x89, b'P', b'N', b'G']));

    let output = binary()
        .args(["forecast-plot", "--config"])
        .arg(&config)
        .arg("--checkpoint")
        .arg(&ckpt)
        .args(["--window", "99999"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let line = stderr_line(&output);
    assert!(line.starts_with("error:") && line.contains("out of range"), "{line}");

    let output = binary()
        .args(["forecast-plot", "--config"])
        .arg(&config)
        .arg("--checkpoint")
        .arg(&ckpt)
        .args(["--channels", "17"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr_line(&output).contains("channel 17"));
}

#[test]
fn make_synthetic_writes_loadable_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let config = write_config(dir.path(), &out);
    let csv_path = dir.path().join("made.csv");

    let output = binary()
        .args(["make-synthetic", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&csv_path)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr_line(&output));

    let text = fs::read_to_string(&csv_path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert_eq!(header.split(',').count(), 7, "timestamp plus six channels");
    assert_eq!(text.lines().count(), 241, "header plus one row per step");

    let labels: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("made_labels.json")).unwrap())
            .unwrap();
    assert_eq!(labels["labels"].as_array().unwrap().len(), 6);
}

#[test]
fn identical_seeds_produce_identical_metrics_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let config = write_config(dir.path(), &dir.path().join("unused"));

    for out in [&out_a, &out_b] {
        let output = binary()
            .args(["train", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert!(output.status.success(), "stderr: {}", stderr_line(&output));
    }
    let strip_wall_clock = |path: &Path| -> Vec<String> {
        fs::read_to_string(path.join("metrics.csv"))
            .unwrap()
            .lines()
            .map(|line| {
                let mut fields: Vec<&str> = line.split(',').collect();
                fields.pop();
                fields.join(",")
            })
            .collect()
    };
    assert_eq!(strip_wall_clock(&out_a), strip_wall_clock(&out_b));
}
