use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use relaxstab_cli::artifact::{read_csv, read_series, BETA_HEADER, KERNEL_HEADER, SERIES_HEADER, SIGMA_HEADER};
use relaxstab_cli::manifest::Manifest;
use relaxstab_cli::pipeline::KernelSummary;
use serde_json::json;

fn small_config(dir: &Path, extra: serde_json::Value) -> PathBuf {
    let mut cfg = json!({
        "dimension": 64,
        "tau": 5.0,
        "seeds": [1, 2],
        "mu_list": [0.5, 2.0],
        "grid": {"dt": 0.1, "t_max": 30.0},
        "fidelity_window": [0.0, 20.0],
        "envelope_bins": 1024,
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

fn relaxstab(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_relaxstab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn run_ok(args: &[&str]) {
    let (code, err) = relaxstab(args);
    assert_eq!(code, 0, "{args:?}: {err}");
}

fn csv_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

#[test]
fn sweep_emits_every_artifact_with_exact_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    let out = dir.path().join("out");
    run_ok(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);

    let manifest: Manifest = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let models = manifest.artifacts.keys().filter(|k| k.starts_with("models/") && k.ends_with(".bin")).count();
    assert_eq!(models, 4 * 2);
    let perturbed = manifest.artifacts.keys().filter(|k| k.ends_with("a_tilde.csv")).count();
    assert_eq!(perturbed, 4 * 2 * 2);
    assert!(manifest.alpha.is_some());
    assert_eq!(manifest.local_coefficients.len(), 8);
    for (rel, entry) in &manifest.artifacts {
        let sha = relaxstab_cli::artifact::sha256_file(&out.join(rel)).unwrap();
        assert_eq!(sha, entry.sha256, "{rel}");
    }

    let s = read_series(&out.join("series/gaussian/mu-0.5/seed-1/fidelity.csv")).unwrap();
    assert!((s.values[0] - 1.0).abs() < 1e-12);
    assert!(s.values.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
    read_csv(&out.join("kernels/linear/seed-2.csv"), &KERNEL_HEADER).unwrap();
    assert_eq!(read_csv(&out.join("fits/beta_mu.csv"), &BETA_HEADER).unwrap().len(), 2);
    assert_eq!(read_csv(&out.join("calibration/sigma_mu.csv"), &SIGMA_HEADER).unwrap().len(), 2);
    read_csv(&out.join("predictions/exponential/mu-2/seed-1.csv"), &SERIES_HEADER).unwrap();
    read_csv(&out.join("recurrence/beta-0.csv"), &SERIES_HEADER).unwrap();

    let k: KernelSummary =
        serde_json::from_slice(&fs::read(out.join("kernels/oscillation/seed-1.json")).unwrap()).unwrap();
    assert_eq!(k.round_trip.len(), 3);
    assert!(k.round_trip.values().all(|r| *r <= 1e-6), "{:?}", k.round_trip);
    assert!(out.join("report.json").exists());
}

#[test]
fn zero_perturbation_leaves_fidelity_at_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({"epsilon": 0.0, "targets": [{"target": "exponential", "tau": 5.0}]}));
    let out = dir.path().join("out");
    run_ok(&["build", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    run_ok(&["evolve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    for mu in ["0.5", "2"] {
        let f = read_series(&out.join(format!("series/exponential/mu-{mu}/seed-1/fidelity.csv"))).unwrap();
        assert!(f.values.iter().all(|v| (v - 1.0).abs() < 1e-9), "mu {mu}");
        let a = read_series(&out.join("series/exponential/seed-1/a.csv")).unwrap();
        let at = read_series(&out.join(format!("series/exponential/mu-{mu}/seed-1/a_tilde.csv"))).unwrap();
        assert!(a.max_abs_diff(&at).unwrap() < 1e-9);
    }
    assert!(!out.join("calibration/sigma_mu.csv").exists());
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({"dimension": 48, "seeds": [1, 2, 3]}));
    let one = dir.path().join("one");
    let eight = dir.path().join("eight");
    run_ok(&["sweep", "--config", cfg.to_str().unwrap(), "--out", one.to_str().unwrap(), "--workers", "1"]);
    run_ok(&["sweep", "--config", cfg.to_str().unwrap(), "--out", eight.to_str().unwrap(), "--workers", "8"]);
    let a = csv_files(&one);
    let b = csv_files(&eight);
    assert!(a.len() > 50);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(v == &b[k], "{} differs", k.display());
    }
}

#[test]
fn rerun_skips_completed_work_and_reproduces_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({"targets": [{"target": "gaussian", "tau": 5.0}]}));
    let out = dir.path().join("out");
    let args = ["build", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    run_ok(&args);
    let first: Manifest = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    run_ok(&args);
    let second: Manifest = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(first.artifacts, second.artifacts);
    let build = &second.stages["build"];
    assert_eq!(build.skipped, build.tasks);

    // A damaged artifact is rebuilt to the same content.
    let blob = out.join("models/gaussian/seed-1.bin");
    fs::write(&blob, b"garbage").unwrap();
    run_ok(&args);
    let third: Manifest = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(first.artifacts, third.artifacts);
    assert_eq!(third.stages["build"].skipped, third.stages["build"].tasks - 1);

    // A fresh directory with the same configuration gives the same hashes.
    let other = dir.path().join("other");
    run_ok(&["build", "--config", cfg.to_str().unwrap(), "--out", other.to_str().unwrap()]);
    let fresh: Manifest = serde_json::from_slice(&fs::read(other.join("manifest.json")).unwrap()).unwrap();
    let hashes = |m: &Manifest| m.artifacts.iter().map(|(k, v)| (k.clone(), v.sha256.clone())).collect::<Vec<_>>();
    assert_eq!(hashes(&first), hashes(&fresh));
}

#[test]
fn master_seed_changes_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({"targets": [{"target": "linear", "tau": 5.0}], "seeds": [1]}));
    for (seed, name) in [("0", "a"), ("1", "b")] {
        let out = dir.path().join(name);
        run_ok(&["build", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
    }
    let a = fs::read(dir.path().join("a/models/linear/seed-1.bin")).unwrap();
    let b = fs::read(dir.path().join("b/models/linear/seed-1.bin")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    let out = dir.path().join("out");
    run_ok(&[
        "build",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--dimension",
        "32",
        "--mu",
        "0.25",
        "--target",
        "gaussian",
    ]);
    let manifest: Manifest = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.config.dimension, 32);
    assert!(manifest.artifacts.contains_key("perturbations/gaussian/mu-0.25/seed-2.json"));
    assert!(!manifest.artifacts.keys().any(|k| k.contains("exponential")));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    let out = dir.path().join("out");
    let (o, c) = (out.to_str().unwrap(), cfg.to_str().unwrap());

    // Validation: empty band list, bad band width, unknown key, unknown target.
    assert_eq!(relaxstab(&["build", "--config", c, "--out", o, "--mu", ""]).0, 1);
    assert_eq!(relaxstab(&["build", "--config", c, "--out", o, "--mu", "3"]).0, 1);
    assert_eq!(relaxstab(&["build", "--config", c, "--out", o, "--target", "sawtooth"]).0, 1);
    let bad = small_config(dir.path(), json!({"epsilonn": 0.1}));
    assert_eq!(relaxstab(&["build", "--config", bad.to_str().unwrap(), "--out", o]).0, 1);

    // I/O: missing config file, missing upstream artifacts.
    assert_eq!(relaxstab(&["build", "--config", "/nonexistent/config.json", "--out", o]).0, 3);
    let cfg = small_config(dir.path(), json!({}));
    let (code, err) = relaxstab(&["evolve", "--config", cfg.to_str().unwrap(), "--out", o]);
    assert_eq!(code, 3, "{err}");
    let manifest: Manifest = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.stages["evolve"].failures.len(), manifest.stages["evolve"].tasks);
}

#[test]
fn n_sweep_reports_each_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({"n_sweep": [16, 32], "targets": [{"target": "exponential", "tau": 5.0}]}));
    let out = dir.path().join("out");
    run_ok(&["nsweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let rows: Vec<serde_json::Value> =
        serde_json::from_slice(&fs::read(out.join("convergence/n_sweep.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["dimension"], 32);
}
