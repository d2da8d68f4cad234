use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vidon::config::ExperimentConfig;
use vidon::sensors::{SensorConfig, SensorKind};

fn vidon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidon"))
        .args(args)
        .env("VIDON_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn tiny_config(out: &Path, kind: SensorKind, epochs: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk_allen_cahn(kind);
    cfg.out = out.to_path_buf();
    cfg.seed = 9;
    cfg.data.sensors = SensorConfig::new(kind, 6, 6);
    cfg.data.train = 8;
    cfg.data.val = 3;
    cfg.data.test = 3;
    cfg.data.test_grid = (5, 5);
    cfg.data.time_slices = 3;
    cfg.data.test_time_slices = 3;
    cfg.train.max_epochs = epochs;
    cfg.train.halve_at = vec![2];
    cfg.train.batch_size = 4;
    cfg.train.query_batch = Some(40);
    cfg
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.json");
    cfg.save(&path).unwrap();
    path
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn run_pipeline(root: &Path) -> (String, Vec<u8>) {
    let cfg = tiny_config(&root.join("exp"), SensorKind::VariableRandom, 3);
    let path = write_config(root, &cfg);
    let path = path.to_str().unwrap();
    ok(&vidon(&["gen-data", "--config", path]));
    ok(&vidon(&["train", "--config", path, "--log-every", "0"]));
    let ckpt = root.join("exp/run/best.ckpt");
    let data = root.join("exp/data");
    ok(&vidon(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]));
    let metrics = fs::read_to_string(root.join("exp/run/eval_test.json")).unwrap();
    (metrics, fs::read(data.join("train.bin")).unwrap())
}

#[test]
fn pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (metrics_a, data_a) = run_pipeline(a.path());
    let (metrics_b, data_b) = run_pipeline(b.path());
    assert_eq!(metrics_a, metrics_b);
    assert!(data_a == data_b, "generated data differs");
    let v: serde_json::Value = serde_json::from_str(&metrics_a).unwrap();
    assert_eq!(v["n"], 3);
    assert!(v["mean_rel_l2"].as_f64().unwrap() > 0.0);
}

#[test]
fn eval_on_validation_reproduces_best_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(&dir.path().join("exp"), SensorKind::Missing, 3);
    let path = write_config(dir.path(), &cfg);
    let path = path.to_str().unwrap();
    ok(&vidon(&["gen-data", "--config", path]));
    ok(&vidon(&["train", "--config", path, "--log-every", "0"]));
    let ckpt = vidon::train::Checkpoint::load(&dir.path().join("exp/run/best.ckpt")).unwrap();
    let out = vidon(&[
        "eval",
        "--checkpoint",
        dir.path().join("exp/run/best.ckpt").to_str().unwrap(),
        "--data",
        dir.path().join("exp/data").to_str().unwrap(),
        "--split",
        "val",
    ]);
    ok(&out);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let mean = v["mean_rel_l2"].as_f64().unwrap();
    assert!((mean - ckpt.val_rel_l2).abs() < 1e-12, "{mean} vs {}", ckpt.val_rel_l2);
}

#[test]
fn resume_continues_epoch_numbering() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(&dir.path().join("exp"), SensorKind::Regular, 2);
    let path = write_config(dir.path(), &cfg);
    ok(&vidon(&["gen-data", "--config", path.to_str().unwrap()]));
    ok(&vidon(&[
        "train",
        "--config",
        path.to_str().unwrap(),
        "--log-every",
        "0",
    ]));

    cfg.train.max_epochs = 5;
    let path = write_config(dir.path(), &cfg);
    let last = dir.path().join("exp/run/last.ckpt");
    ok(&vidon(&[
        "train",
        "--config",
        path.to_str().unwrap(),
        "--resume",
        last.to_str().unwrap(),
        "--log-every",
        "0",
    ]));
    let csv = fs::read_to_string(dir.path().join("exp/run/metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], vidon::train::METRICS_HEADER);
    let epochs: Vec<usize> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(epochs, vec![1, 2, 3, 4, 5]);
}

#[test]
fn invalid_sensor_kind_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(&dir.path().join("exp"), SensorKind::Regular, 1);
    let mut v = serde_json::to_value(&cfg).unwrap();
    v["data"]["sensors"]["kind"] = serde_json::json!("hexagonal");
    let path = dir.path().join("bad.json");
    fs::write(&path, v.to_string()).unwrap();
    let out = vidon(&["gen-data", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("data.sensors.kind"), "{err}");

    let out = vidon(&[
        "eval",
        "--checkpoint",
        "x.ckpt",
        "--data",
        ".",
        "--sensors",
        "hexagonal",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_artifacts_exit_with_io_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = vidon(&[
        "eval",
        "--checkpoint",
        dir.path().join("none.ckpt").to_str().unwrap(),
        "--data",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let cfg = tiny_config(&dir.path().join("exp"), SensorKind::Regular, 1);
    let path = write_config(dir.path(), &cfg);
    let out = vidon(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_template_round_trips_and_verify_runs() {
    let out = vidon(&["config", "--problem", "navier-stokes", "--sensors", "random"]);
    ok(&out);
    let cfg: ExperimentConfig = serde_json::from_slice(&out.stdout).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.data.sensors.kind, SensorKind::Random);

    let out = vidon(&["verify", "--suite", "pde"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().all(|l| l.starts_with("[PASS]")), "{text}");
}
