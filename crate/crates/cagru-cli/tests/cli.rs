//! End-to-end checks of the binary: artifact layout, config-file
//! precedence, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::Command;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_cagru")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cagru-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn synth_small(dir: &Path) -> PathBuf {
    let status = Command::new(binary())
        .args(["synth", "--customers", "40", "--shops", "3", "--days", "80", "--seed", "3"])
        .arg("--out")
        .arg(dir.join("data"))
        .status()
        .unwrap();
    assert!(status.success());
    dir.join("data/transactions.csv")
}

#[test]
fn synth_writes_transactions_and_labels() {
    let dir = temp_dir("synth");
    let data = synth_small(&dir);
    let text = std::fs::read_to_string(&data).unwrap();
    assert!(text.starts_with("customer_id,shop_id,date\n"));
    let labels = std::fs::read_to_string(dir.join("data/archetypes.csv")).unwrap();
    assert!(labels.starts_with("customer_id,archetype\n"));
    assert!(labels.contains(",loyal"));
    assert!(labels.contains(",periodic"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn survey_emits_plot_ready_csvs() {
    let dir = temp_dir("survey");
    let data = synth_small(&dir);
    let status = Command::new(binary())
        .args(["survey", "--seed", "3"])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(dir.join("survey"))
        .status()
        .unwrap();
    assert!(status.success());
    for file in ["activeness_histogram.csv", "hamming_matrix.csv", "engagement_clusters.csv"] {
        assert!(dir.join("survey").join(file).exists(), "{file} missing");
    }
    let hist = std::fs::read_to_string(dir.join("survey/activeness_histogram.csv")).unwrap();
    assert_eq!(hist.lines().count(), 11);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn evaluate_writes_report_and_metrics() {
    let dir = temp_dir("evaluate");
    let data = synth_small(&dir);
    let status = Command::new(binary())
        .args([
            "evaluate", "--window", "5", "--embed-dim", "4", "--hidden-dim", "4",
            "--max-epochs", "1", "--n-clusters", "2", "--seed", "3",
        ])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(dir.join("run"))
        .status()
        .unwrap();
    assert!(status.success());
    let report = std::fs::read_to_string(dir.join("run/report.json")).unwrap();
    assert!(report.contains("\"variant\": \"CAGRU\""));
    for file in [
        "metrics.csv",
        "dictionary.csv",
        "cluster_labels.csv",
        "centroids.csv",
        "cluster_manifest.json",
        "model_cluster0.ckpt",
        "loss_curve_cluster0.csv",
    ] {
        assert!(dir.join("run").join(file).exists(), "{file} missing");
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_file_applies_and_flags_override() {
    let dir = temp_dir("config");
    let data = synth_small(&dir);
    let conf = dir.join("run.conf");
    std::fs::write(
        &conf,
        format!(
            "# comment\ndata = {}\nwindow = 5\nembed_dim = 4\nhidden_dim = 4\nmax_epochs = 1\nn_clusters = 2\nseed = 3\nvariant = GRU\n",
            data.display()
        ),
    )
    .unwrap();

    let out = Command::new(binary())
        .arg("evaluate")
        .arg("--config")
        .arg(&conf)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("GRU"));

    // Explicit flag wins over the file value.
    let out = Command::new(binary())
        .arg("evaluate")
        .arg("--config")
        .arg(&conf)
        .args(["--variant", "CGRU"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("CGRU"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = temp_dir("exit");
    let data = synth_small(&dir);

    // Config error -> 2.
    let status = Command::new(binary())
        .args(["evaluate", "--window", "5", "--top-n-fraction", "2.0"])
        .arg("--data")
        .arg(&data)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Data error -> 3.
    let status = Command::new(binary())
        .args(["evaluate", "--window", "5"])
        .arg("--data")
        .arg(dir.join("missing.csv"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));

    // Malformed rows are data errors too.
    let bad = dir.join("bad.csv");
    std::fs::write(&bad, "customer_id,shop_id,date\nc1,s1,2024-13-01\n").unwrap();
    let out = Command::new(binary())
        .args(["evaluate", "--window", "5"])
        .arg("--data")
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_emits_comparison_csv() {
    let dir = temp_dir("sweep");
    let data = synth_small(&dir);
    let status = Command::new(binary())
        .args([
            "sweep", "--window", "5", "--embed-dim", "4", "--hidden-dim", "4",
            "--max-epochs", "1", "--n-values", "2,3", "--seed", "3",
        ])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(dir.join("sweep"))
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(dir.join("sweep/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("n_clusters,"));
    std::fs::remove_dir_all(&dir).ok();
}
