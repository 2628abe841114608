//! End-to-end tests driving the compiled binary, covering the composition
//! story (simulate -> weights -> select -> beamform -> evaluate) and the
//! batch entry points.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adhocsep"))
}

fn ok(output: &Output) -> &Output {
    assert!(
        output.status.success(),
        "command failed with {}\nstdout: {}\nstderr: {}",
        output.status,
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr),
    );
    output
}

fn stdout_str(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let out = bin().output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage"), "stderr: {stderr}");
}

#[test]
fn unknown_subcommand_fails() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn select_matches_the_documented_threshold_behavior() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.json");
    std::fs::write(&weights, "[0.9, 0.8, 0.3]").unwrap();

    let out = bin()
        .args(["select", "--weights"])
        .arg(&weights)
        .args(["--algorithm", "auto-n", "--gamma", "0.5"])
        .output()
        .unwrap();
    assert_eq!(stdout_str(ok(&out)).trim(), "[1.0,0.0,0.0]");

    let out = bin()
        .args(["select", "--weights"])
        .arg(&weights)
        .args(["--algorithm", "soft-n", "--gamma", "0.3"])
        .output()
        .unwrap();
    assert_eq!(stdout_str(ok(&out)).trim(), "[0.9,0.8,0.0]");

    // Writing to a file instead of stdout.
    let mask_path = dir.path().join("mask.json");
    let out = bin()
        .args(["select", "--weights"])
        .arg(&weights)
        .args(["--algorithm", "one-best", "--out"])
        .arg(&mask_path)
        .output()
        .unwrap();
    ok(&out);
    let mask: Vec<f64> = serde_json::from_str(&std::fs::read_to_string(&mask_path).unwrap()).unwrap();
    assert_eq!(mask, vec![1.0, 0.0, 0.0]);

    let out = bin()
        .args(["select", "--weights"])
        .arg(&weights)
        .args(["--algorithm", "bogus"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn scene_pipeline_composes_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");

    let out = bin()
        .args(["simulate", "--seed", "7", "--mics", "5", "--duration", "2.0", "--out"])
        .arg(&scene)
        .output()
        .unwrap();
    ok(&out);
    assert!(scene.join("scenario.json").is_file());
    assert!(scene.join("target_dry.wav").is_file());
    assert!(scene.join("reference.wav").is_file());
    for j in 0..5 {
        assert!(scene.join(format!("mixture_ch{j:02}.wav")).is_file());
    }

    let weights_path = dir.path().join("weights.json");
    let out = bin()
        .args(["weights", "--scene"])
        .arg(&scene)
        .arg("--out")
        .arg(&weights_path)
        .output()
        .unwrap();
    ok(&out);
    let q: Vec<f64> = serde_json::from_str(&std::fs::read_to_string(&weights_path).unwrap()).unwrap();
    assert_eq!(q.len(), 5);
    assert!(q.iter().all(|v| (0.0..=1.0).contains(v)));

    let mask_path = dir.path().join("mask.json");
    let out = bin()
        .args(["select", "--weights"])
        .arg(&weights_path)
        .args(["--algorithm", "auto-n", "--gamma", "0.5", "--out"])
        .arg(&mask_path)
        .output()
        .unwrap();
    ok(&out);

    let estimate = dir.path().join("estimate.wav");
    let filter_dump = dir.path().join("filter.json");
    let out = bin()
        .args(["beamform", "--scene"])
        .arg(&scene)
        .arg("--selection")
        .arg(&mask_path)
        .arg("--out")
        .arg(&estimate)
        .arg("--dump-filter")
        .arg(&filter_dump)
        .output()
        .unwrap();
    ok(&out);
    assert!(estimate.is_file());

    let mask: Vec<f64> = serde_json::from_str(&std::fs::read_to_string(&mask_path).unwrap()).unwrap();
    let selected = mask.iter().filter(|p| **p > 0.0).count();
    if selected > 1 {
        // A real MVDR ran, so the filter dump must parse and have one
        // column per selected channel.
        let dump: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&filter_dump).unwrap()).unwrap();
        assert_eq!(dump["cols"], 1);
        assert_eq!(dump["rows"], selected);
    }

    let score = |wav: &Path| -> serde_json::Value {
        let out = bin()
            .args(["evaluate", "--estimate"])
            .arg(wav)
            .arg("--reference")
            .arg(scene.join("reference.wav"))
            .output()
            .unwrap();
        serde_json::from_str(&stdout_str(ok(&out))).unwrap()
    };
    let report = score(&estimate);
    let baseline = score(&scene.join("mixture_ref.wav"));
    let si_sdr = report["si_sdr_db"].as_f64().unwrap();
    let stoi = report["stoi"].as_f64().unwrap();
    assert!(si_sdr.is_finite());
    assert!(
        si_sdr > baseline["si_sdr_db"].as_f64().unwrap(),
        "separation did not beat the raw mixture: {si_sdr} vs {baseline}"
    );
    assert!((0.0..=1.0).contains(&stoi));
    assert!(report["pesq"].is_null());
}

fn write_config(path: &Path, out_dir: &Path, seed: u64) {
    let config = serde_json::json!({
        "corpus": {"kind": "synthetic", "duration_secs": 1.2},
        "num_scenarios": 2,
        "num_mics": 3,
        "sampler": {
            "length_range": [4.0, 6.0],
            "width_range": [4.0, 6.0],
            "t60_mean": 0.15,
            "t60_std": 0.02,
            "t60_range": [0.08, 0.25]
        },
        "methods": ["single-channel", "all-channels", "auto-n"],
        "master_seed": seed,
        "output_dir": out_dir
    });
    std::fs::write(path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
}

#[test]
fn run_writes_deterministic_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    write_config(&config_path, &out_a, 99);

    let out = bin().args(["run", "--config"]).arg(&config_path).output().unwrap();
    ok(&out);
    assert!(out_a.join("results.csv").is_file());
    assert!(out_a.join("results.json").is_file());
    assert!(out_a.join("aggregates.csv").is_file());
    assert!(out_a.join("scenarios/s0000/reference.wav").is_file());
    assert!(out_a.join("scenarios/s0001/auto-n.wav").is_file());

    // Stdout carries the aggregate table.
    let stdout = stdout_str(&out);
    assert!(stdout.contains("method,hyperparameter"), "stdout: {stdout}");
    assert!(stdout.contains("auto-n"));

    // Same config, fresh output dir: byte-identical CSV.
    let out = bin()
        .args(["run", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out_b)
        .output()
        .unwrap();
    ok(&out);
    let a = std::fs::read(out_a.join("results.csv")).unwrap();
    let b = std::fs::read(out_b.join("results.csv")).unwrap();
    assert_eq!(a, b);

    // A different seed changes the rows.
    let out_c = dir.path().join("c");
    let out = bin()
        .args(["run", "--config"])
        .arg(&config_path)
        .args(["--seed", "100", "--out"])
        .arg(&out_c)
        .output()
        .unwrap();
    ok(&out);
    let c = std::fs::read(out_c.join("results.csv")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn sweep_gamma_writes_rows_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    let out_dir = dir.path().join("sweep");
    write_config(&config_path, &out_dir, 7);

    let out = bin()
        .args(["sweep", "--config"])
        .arg(&config_path)
        .args(["--gamma-values", "0.3,0.6"])
        .output()
        .unwrap();
    ok(&out);

    let csv = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    // Two scenarios x two gammas x {auto-n, soft-n} plus the header.
    assert_eq!(csv.lines().count(), 9, "csv:\n{csv}");
    assert!(csv.lines().skip(1).all(|l| l.starts_with("auto-n,0.") || l.starts_with("soft-n,0.")));
    assert!(out_dir.join("plots/si_sdr_db.svg").is_file());
    assert!(out_dir.join("plots/stoi.svg").is_file());

    // Passing both grids (or neither) is a usage error.
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&config_path)
        .args(["--gamma-values", "0.3", "--n-values", "2"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = bin().args(["sweep", "--config"]).arg(&config_path).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn run_requires_an_output_dir_and_valid_config() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(
        &config_path,
        r#"{"num_scenarios": 1, "num_mics": 2, "methods": ["auto-n"], "master_seed": 1}"#,
    )
    .unwrap();
    let out = bin().args(["run", "--config"]).arg(&config_path).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("output"), "stderr: {stderr}");

    // Malformed config JSON.
    std::fs::write(&config_path, "{not json").unwrap();
    let out = bin().args(["run", "--config"]).arg(&config_path).output().unwrap();
    assert!(!out.status.success());
}
