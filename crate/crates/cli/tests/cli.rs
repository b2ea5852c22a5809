use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

use hamkernel::config::{ExperimentConfig, HyperValue};
use hamkernel::io;
use hamkernel::metrics::{odd_error, SampleBox};
use hamkernel::systems::System;
use hamkernel::tuning::SearchMethod;

fn hamkernel(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hamkernel"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hamkernel(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Pendulum recipe with fixed hyperparameters, written as JSON.
fn fixed_config(dir: &Path) -> String {
    let mut cfg = ExperimentConfig::preset("pendulum").unwrap();
    cfg.model.sigma = HyperValue::Fixed(2.0);
    cfg.model.lambda = HyperValue::Fixed(1e-6);
    let path = dir.join("cfg.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn simulate_writes_reproducible_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate"]);
    let first = std::fs::read(d.join("dataset.csv")).unwrap();
    assert_eq!(read_csv(&d.join("dataset.csv")).len(), 24);
    assert!(d.join("dataset.meta.json").exists());
    ok(d, &["simulate"]);
    assert_eq!(std::fs::read(d.join("dataset.csv")).unwrap(), first);
    ok(d, &["simulate", "--seed", "9"]);
    assert_ne!(std::fs::read(d.join("dataset.csv")).unwrap(), first);
}

#[test]
fn noiseless_simulation_has_exact_derivatives() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--sigma-n", "0"]);
    let data = io::read_dataset(&dir.path().join("dataset.csv")).unwrap();
    let sys = System::from_id("pendulum").unwrap();
    for (x, y) in data.xs.iter().zip(&data.ys) {
        assert_eq!(&sys.dynamics(x.as_slice()).unwrap(), y);
    }
}

#[test]
fn train_rollout_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = fixed_config(d);
    ok(d, &["--config", &cfg, "simulate"]);
    let data = d.join("dataset.csv");
    let stdout = ok(
        d,
        &["--config", &cfg, "train", "--data", data.to_str().unwrap()],
    );
    assert!(stdout.contains("training mse"));

    let model = io::read_model(&d.join("model.json")).unwrap();
    let b = SampleBox::new(vec![-PI, -8.0], vec![PI, 8.0]).unwrap();
    assert!(odd_error(&model, &b, 2000, 1).unwrap().0 <= 1e-10);
    let cfg_digest = ExperimentConfig::load(Path::new(&cfg)).unwrap().digest();
    assert_eq!(
        model.provenance.config_digest.as_deref(),
        Some(cfg_digest.as_str())
    );

    let model_path = d.join("model.json");
    let m = model_path.to_str().unwrap();
    ok(
        d,
        &[
            "rollout",
            "--model",
            m,
            "--x0",
            "1.2,0.5",
            "--t-end",
            "1",
            "--n-steps",
            "11",
        ],
    );
    let fwd = read_csv(&d.join("trajectory.csv"));
    ok(
        d,
        &[
            "rollout",
            "--model",
            m,
            "--x0",
            "-1.2,-0.5",
            "--t-end",
            "1",
            "--n-steps",
            "11",
        ],
    );
    let back = read_csv(&d.join("trajectory.csv"));
    assert_eq!(fwd.len(), 11);
    for (a, b) in fwd.iter().zip(&back) {
        assert_eq!(a[0], b[0]);
        assert!((a[1] + b[1]).abs() <= 1e-12 && (a[2] + b[2]).abs() <= 1e-12);
    }
    assert!(d.join("trajectory.meta.json").exists());

    let table = ok(d, &["--config", &cfg, "evaluate", "--model", m]);
    assert!(table.contains("pendulum"));
    let reports: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("eval.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 1);
    assert!(d.join("eval.txt").exists());
}

#[test]
fn tune_mode_embeds_record_with_default_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut cfg = ExperimentConfig::preset("pendulum").unwrap();
    cfg.tuning.method = SearchMethod::Random { trials: 5, seed: 0 };
    let path = d.join("cfg.toml");
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    let p = path.to_str().unwrap();
    ok(d, &["--config", p, "train"]);
    let file = io::read_model_file(&d.join("model.json")).unwrap();
    let rec = file.tuning.expect("tuning record");
    assert_eq!(rec.bounds.sigma, (1.0, 30.0));
    assert_eq!(rec.bounds.lambda, (1e-8, 1e-1));

    ok(d, &["--config", p, "tune"]);
    let t: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("tuning.json")).unwrap()).unwrap();
    assert_eq!(t["tuning"]["sigma"].as_f64(), Some(rec.sigma));
}

#[test]
fn zero_model_rolls_out_constant() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = fixed_config(d);
    ok(d, &["--config", &cfg, "train"]);
    let path = d.join("model.json");
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    for a in v["alpha"].as_array_mut().unwrap() {
        *a = 0.0.into();
    }
    std::fs::write(&path, v.to_string()).unwrap();
    ok(
        d,
        &[
            "rollout",
            "--model",
            path.to_str().unwrap(),
            "--x0",
            "0.3,-0.2",
            "--n-steps",
            "5",
        ],
    );
    for row in read_csv(&d.join("trajectory.csv")) {
        assert_eq!(&row[1..], &[0.3, -0.2]);
    }
}

#[test]
fn export_field_grids() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let lower = format!("{},-1", -PI / 2.0);
    let upper = format!("{},1", PI / 2.0);
    let grid = [
        "--lower",
        lower.as_str(),
        "--upper",
        upper.as_str(),
        "--counts",
        "3,3",
    ];
    let mut args = vec!["export-field"];
    args.extend(grid);
    ok(d, &args);
    let rows = read_csv(&d.join("field.csv"));
    assert_eq!(rows.len(), 9);
    let row = rows
        .iter()
        .find(|r| (r[0] - PI / 2.0).abs() < 1e-12 && r[1] == 0.0)
        .expect("grid contains (pi/2, 0)");
    assert!(row[2].abs() < 1e-12 && (row[3] + 9.81).abs() < 1e-12);

    let cfg = fixed_config(d);
    ok(d, &["--config", &cfg, "train"]);
    let model = d.join("model.json");
    let mut args = vec!["export-field", "--model", model.to_str().unwrap()];
    args.extend(grid);
    ok(d, &args);
    let rows = read_csv(&d.join("field.csv"));
    for (a, b) in rows.iter().zip(rows.iter().rev()) {
        assert!((a[0] + b[0]).abs() < 1e-12 && (a[1] + b[1]).abs() < 1e-12);
        assert!((a[2] + b[2]).abs() < 1e-12 && (a[3] + b[3]).abs() < 1e-12);
    }
}

#[test]
fn sweep_features_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut cfg = ExperimentConfig::sweep_preset();
    cfg.dataset.points = Some(200);
    cfg.model.sigma = HyperValue::Fixed(3.0);
    cfg.model.lambda = HyperValue::Fixed(1e-6);
    let path = d.join("sweep.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    ok(
        d,
        &[
            "--config",
            path.to_str().unwrap(),
            "sweep-features",
            "--d",
            "10,2560",
            "--n-seeds",
            "5",
        ],
    );
    let rows = read_csv(&d.join("sweep.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows[1][1] < rows[0][1]);
    let meta: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("sweep.meta.json")).unwrap()).unwrap();
    let exact = meta["exact_mse"].as_f64().unwrap();
    assert!(rows.iter().all(|r| exact <= r[1]));
    assert_eq!(meta["config_digest"].as_str(), Some(cfg.digest().as_str()));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| hamkernel(d, args).status.code();

    let bad = d.join("bad.json");
    std::fs::write(&bad, r#"{"system": "pendulum"}"#).unwrap();
    assert_eq!(
        code(&["--config", bad.to_str().unwrap(), "simulate"]),
        Some(2)
    );
    assert_eq!(code(&["--system", "unicycle", "simulate"]), Some(2));
    assert_eq!(code(&["--threads", "0", "simulate"]), Some(2));
    assert_eq!(code(&["simulate", "--sigma-n", "-1"]), Some(2));
    assert_eq!(code(&["--config", "missing.json", "simulate"]), Some(4));
    assert_eq!(
        code(&["rollout", "--model", "missing.json", "--x0", "0,0"]),
        Some(4)
    );

    let cfg = fixed_config(d);
    ok(d, &["--config", &cfg, "train"]);
    let path = d.join("model.json");
    let m = path.to_str().unwrap();
    assert_eq!(code(&["rollout", "--model", m, "--x0", "0,0,0"]), Some(2));

    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    for a in v["alpha"].as_array_mut().unwrap() {
        *a = 1e300.into();
    }
    std::fs::write(&path, v.to_string()).unwrap();
    assert_eq!(code(&["rollout", "--model", m, "--x0", "1,1"]), Some(3));
}
