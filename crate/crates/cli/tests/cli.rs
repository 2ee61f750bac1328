use std::path::Path;
use std::process::{Command, Output};

use gpmpc::RunConfig;
use gpmpc_core::data::train;
use gpmpc_core::gp::GpModel;
use gpmpc_core::io::truth_log_from_csv;

fn gpmpc(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpmpc"))
        .env_remove("GPMPC_OUTPUT_ROOT")
        .arg("--set")
        .arg(format!("output.dir={}", root.display()))
        .args(args)
        .output()
        .unwrap()
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = gpmpc(root, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn missing_model_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = gpmpc(dir.path(), &["simulate", "--variant", "gp"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("run train first"));
    assert_eq!(code(&gpmpc(dir.path(), &["train"])), 3);
}

#[test]
fn bad_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gpmpc(dir.path(), &["--set", "mpc.horizonn=5", "generate-data"])), 2);
    assert_eq!(code(&gpmpc(dir.path(), &["--set", "mpc.horizon=0", "generate-data"])), 2);
    assert_eq!(code(&gpmpc(dir.path(), &["--set", "mpc.p_def=1.5", "generate-data"])), 2);

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "version = 1\n[scenario]\ncolour = \"red\"\n").unwrap();
    assert_eq!(code(&gpmpc(dir.path(), &["--config", cfg.to_str().unwrap(), "generate-data"])), 2);
    std::fs::write(&cfg, "version = 1\n[scenario\n").unwrap();
    assert_eq!(code(&gpmpc(dir.path(), &["--config", cfg.to_str().unwrap(), "generate-data"])), 2);
    assert!(!dir.path().join("data").exists());
}

#[test]
fn single_step_run_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--set", "scenario.plant=\"arx\"", "--set", "scenario.duration_s=0.1"];
    ok(dir.path(), &[&args[..], &["simulate", "--variant", "nominal"]].concat());
    let csv = std::fs::read_to_string(dir.path().join("sim/constant_nominal.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let svg = std::fs::read_to_string(dir.path().join("sim/constant_nominal.svg")).unwrap();
    assert!(svg.ends_with("</svg>\n") && !svg.contains("NaN"));
    let metrics = std::fs::read_to_string(dir.path().join("sim/constant_nominal_metrics.txt")).unwrap();
    assert!(metrics.contains("constraint_violations = 0"));
}

#[test]
fn data_seed_changes_values_not_shapes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(a.path(), &["generate-data"]);
    ok(b.path(), &["--set", "data.seed=1", "generate-data"]);
    for name in ["train_00.csv", "train_05.csv", "test_02.csv"] {
        let x = std::fs::read_to_string(a.path().join("data").join(name)).unwrap();
        let y = std::fs::read_to_string(b.path().join("data").join(name)).unwrap();
        let (lx, ly) = (truth_log_from_csv(&x).unwrap(), truth_log_from_csv(&y).unwrap());
        assert_eq!(lx.len(), ly.len());
        assert_eq!(lx.dt, ly.dt);
        assert_ne!(lx.av, ly.av, "{name}");
    }
    assert!(!a.path().join("data/train_06.csv").exists());
}

#[test]
fn unperturbed_truth_has_nothing_to_learn() {
    let dir = tempfile::tempdir().unwrap();
    let set = [
        "--set", "data.lag_gain=0", "--set", "data.max_increment_mps=inf", "--set", "data.noise_std_mps=0",
    ];
    ok(dir.path(), &[&set[..], &["generate-data"]].concat());
    ok(dir.path(), &[&set[..], &["train"]].concat());
    let text = std::fs::read_to_string(dir.path().join("model/train_report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    let arx = report["test"]["arx"].as_f64().unwrap();
    let arx_gp = report["test"]["arx_gp"].as_f64().unwrap();
    assert!(arx <= 1e-6, "{arx}");
    assert!(arx_gp <= arx + 1e-12, "{arx_gp} vs {arx}");
}

#[test]
fn saved_model_predicts_like_in_memory_fit() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate-data"]);
    ok(dir.path(), &["train"]);
    let saved = GpModel::load(&dir.path().join(gpmpc::commands::MODEL_FILE)).unwrap();

    let cfg = RunConfig::default();
    let logs = gpmpc_core::data::generate_logs(&cfg.data_spec()).unwrap();
    let fresh = train(&logs.train, &cfg.arx().unwrap(), &cfg.train_spec()).unwrap();
    for i in 0..100 {
        let q = [0.3 * i as f64, 30.0 - 0.25 * i as f64];
        assert_eq!(saved.predict(&q).unwrap(), fresh.predict(&q).unwrap(), "query {q:?}");
    }
}

#[test]
fn plot_is_byte_identical_and_needs_a_variant() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--set", "scenario.plant=\"arx\"", "--set", "scenario.duration_s=3"];
    ok(dir.path(), &[&args[..], &["simulate", "--variant", "nominal"]].concat());
    let log = dir.path().join("sim/constant_nominal.csv");
    let first = std::fs::read(dir.path().join("sim/constant_nominal.svg")).unwrap();
    let out = dir.path().join("again.svg");
    ok(dir.path(), &["plot", log.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(std::fs::read(&out).unwrap(), first);

    let renamed = dir.path().join("run.csv");
    std::fs::copy(&log, &renamed).unwrap();
    assert_eq!(code(&gpmpc(dir.path(), &["plot", renamed.to_str().unwrap()])), 2);
    ok(dir.path(), &["plot", renamed.to_str().unwrap(), "--variant", "nominal"]);
    assert!(dir.path().join("run.svg").exists());
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gpmpc"))
        .env("GPMPC_OUTPUT_ROOT", dir.path())
        .args(["--set", "data.n_train=1", "--set", "data.n_test=1", "generate-data"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("data/train_00.csv").exists());
}
