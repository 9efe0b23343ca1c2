//! End-to-end tests of the `qclab` binary: exit codes, strict config
//! validation, and byte-level output reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qclab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const QC_CONFIG: &str = r#"{
    "problem": {"kind": "two_point", "r": 2.0, "omega": 0.75},
    "algorithm": "qc_sgd",
    "optimizer": {
        "clip": {"mode": "quantile", "schedule": {"kind": "constant", "p0": 0.5}, "m": 8, "exact": true},
        "step": {"kind": "constant", "gamma0": 0.01},
        "horizon": 50,
        "x0": [0.0],
        "trace_every": 5
    },
    "seeds": [1],
    "output": {"dir": "out", "prefix": "mini"}
}"#;

#[test]
fn run_writes_expected_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", QC_CONFIG);
    let out = dir.path().join("traces");
    let res = qclab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("mini_seed1.csv")).unwrap();
    // header + horizon / trace_every rows
    assert_eq!(csv.lines().count(), 1 + 50 / 5);
    assert!(csv.starts_with("iter,f,grad_norm_sq,tau,p,gamma,alpha,clipped,noise_scale,x_norm"));
    assert!(out.join("mini_summary.json").exists());
}

#[test]
fn run_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", QC_CONFIG);
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for out in [&out1, &out2] {
        let res = qclab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(res.status.success());
    }
    for name in ["mini_seed1.csv", "mini_summary.json"] {
        let a = fs::read(out1.join(name)).unwrap();
        let b = fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
}

#[test]
fn seed_list_override_produces_one_trace_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", QC_CONFIG);
    let out = dir.path().join("traces");
    let res = qclab(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed-list",
        "7,8,9",
    ]);
    assert!(res.status.success());
    for seed in [7, 8, 9] {
        assert!(out.join(format!("mini_seed{seed}.csv")).exists());
    }
}

#[test]
fn invalid_quantile_exits_one_and_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = QC_CONFIG.replace("\"p0\": 0.5", "\"p0\": 1.5");
    let cfg = write_config(dir.path(), "bad.json", &bad);
    let res = qclab(&["run", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("p0"), "stderr: {err}");
}

#[test]
fn unknown_key_exits_one_with_line_anchor() {
    let dir = tempfile::tempdir().unwrap();
    let bad = QC_CONFIG.replace("\"seeds\"", "\"sseeds\"");
    let cfg = write_config(dir.path(), "bad.json", &bad);
    let res = qclab(&["run", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("sseeds") && err.contains("line"), "stderr: {err}");
}

#[test]
fn divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_text = r#"{
        "problem": {"kind": "quadratic", "a_diag": [1.0], "x_star": [0.0],
                    "noise": {"kind": "none"}},
        "algorithm": "sgd",
        "optimizer": {
            "clip": {"mode": "none"},
            "step": {"kind": "constant", "gamma0": 1e12},
            "horizon": 10000,
            "x0": [1.0]
        },
        "seeds": [1],
        "output": {"dir": "out"}
    }"#;
    let cfg = write_config(dir.path(), "div.json", cfg_text);
    let out = dir.path().join("traces");
    let res = qclab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("non-finite"), "stderr: {err}");
}

#[test]
fn sweep_gamma_emits_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", QC_CONFIG);
    let out = dir.path().join("sweeps");
    let res = qclab(&[
        "sweep",
        "--config",
        &cfg,
        "--axis",
        "gamma",
        "--values",
        "0.1,0.01,0.001",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let table = fs::read_to_string(out.join("sweep_gamma.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.starts_with("axis_value,stationarity_mean,stationarity_stderr,final_f_mean"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("sweep_gamma.json")).unwrap()).unwrap();
    assert_eq!(summary["axis"], "gamma");
    assert_eq!(summary["rows"].as_array().unwrap().len(), 3);
    assert_eq!(summary["rows"][0]["per_seed"].as_array().unwrap().len(), 1);
    assert!(summary["base_config_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn jobs_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", QC_CONFIG);
    let out = dir.path().join("traces");
    let res = Command::new(env!("CARGO_BIN_EXE_qclab"))
        .args(["run", "--config", &cfg, "--out", out.to_str().unwrap()])
        .env("QCLAB_JOBS", "1")
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("mini_seed1.csv").exists());

    let res = Command::new(env!("CARGO_BIN_EXE_qclab"))
        .args(["run", "--config", &cfg, "--out", out.to_str().unwrap()])
        .env("QCLAB_JOBS", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn sweep_empty_values_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", QC_CONFIG);
    let res = qclab(&["sweep", "--config", &cfg, "--axis", "gamma", "--values", ""]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn sweep_axis_invalid_for_algorithm_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", QC_CONFIG);
    let res = qclab(&["sweep", "--config", &cfg, "--axis", "B", "--values", "4"]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("dp_qc_sgd"), "stderr: {err}");
}

#[test]
fn schedule_prints_exponents() {
    let res = qclab(&["schedule", "--q", "2"]);
    assert!(res.status.success());
    let out = String::from_utf8_lossy(&res.stdout);
    assert!(out.contains("0.333333333333"), "stdout: {out}");
    assert!(out.contains("-0.333333333333"), "stdout: {out}");

    let res = qclab(&["schedule", "--q", "1"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn verify_rejects_unknown_suite() {
    let res = qclab(&["verify", "nonsense"]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("unknown suite"), "stderr: {err}");
}

#[test]
fn verify_lemma1_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let res = qclab(&["verify", "lemma1", "--out", dir.path().to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify_lemma1.json")).unwrap())
            .unwrap();
    assert_eq!(report["suite"], "lemma1");
    assert_eq!(report["all_pass"], true);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 18);
}

#[test]
fn sample_configs_parse_and_run_briefly() {
    // the shipped example configs must stay valid
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ["qc_sgd_two_point.json", "sgd_quadratic.json", "dp_qc_sgd_quadratic.json"] {
        let text = fs::read_to_string(root.join(name)).unwrap();
        let cfg = qclab::config::RunConfigFile::from_json(&text)
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!cfg.seeds.is_empty());
    }
}
