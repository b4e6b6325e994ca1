use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bridgelab"));
    c.env_remove("BRIDGELAB_OUT");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn args(v: &[&str]) -> Vec<String> {
    std::iter::once("bridgelab").chain(v.iter().copied()).map(String::from).collect()
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_exits_2() {
    let out = bin().args(["verify", "--config", "x.json", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn verify_golden_scalar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("golden_scalar.json");
    let code = bridgelab::cli::parse_and_dispatch(&args(&["verify", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]));
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("verdicts.json")).unwrap()).unwrap();
    assert_eq!(v["all_pass"], true);
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let r: f64 = csv.lines().find(|l| l.starts_with("0,riccati_fixed_point,")).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((r - 0.6180339887).abs() < 1e-9);
}

#[test]
fn rates_writes_fitted_slope_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("bounded.json");
    let out = bin().args(["rates", "--config", cfg.to_str().unwrap(), "--iterations", "50", "--out", dir.path().to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("slope"));
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("step,metric,value\n"));
    assert!(csv.lines().any(|l| l.contains(",fit_slope:")));
    assert!(csv.lines().any(|l| l.starts_with("50,kl_eta_pi_even,")));
}

#[test]
fn env_var_sets_default_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("golden_scalar.json");
    let out = bin().env("BRIDGELAB_OUT", dir.path()).args(["gaussian-run", "--config", cfg.to_str().unwrap(), "--iterations", "15"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("verdicts.json").exists());
}

#[test]
fn regime_mismatch_and_bad_override_exit_2() {
    let cfg = configs().join("bounded.json");
    let c = cfg.to_str().unwrap();
    assert_eq!(bridgelab::cli::parse_and_dispatch(&args(&["gaussian-run", "--config", c])), 2);
    assert_eq!(bridgelab::cli::parse_and_dispatch(&args(&["verify", "--config", c, "--set", "nope=3"])), 2);
    assert_eq!(bridgelab::cli::parse_and_dispatch(&args(&["verify", "--config", "/nonexistent.json"])), 2);
}

#[test]
fn failing_verdict_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    // a 2-step Gaussian run cannot supply the ten even steps the rate check needs
    let cfg = configs().join("gaussian_random.json");
    let code = bridgelab::cli::parse_and_dispatch(&args(&["rates", "--config", cfg.to_str().unwrap(), "--iterations", "2", "--out", dir.path().to_str().unwrap()]));
    assert_eq!(code, 1);
}

#[test]
fn gen_writes_instance_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("inst.json");
    let code = bridgelab::cli::parse_and_dispatch(&args(&["gen", "--profile", "bounded", "--size", "4,6", "--seed", "3", "--out", file.to_str().unwrap()]));
    assert_eq!(code, 0);
    let m: bridgelab::discrete::ModelFile = serde_json::from_str(&std::fs::read_to_string(&file).unwrap()).unwrap();
    assert_eq!((m.nx, m.ny), (4, 6));
    assert_eq!(bridgelab::cli::parse_and_dispatch(&args(&["gen", "--profile", "nope", "--size", "2"])), 2);
}

#[test]
fn same_invocation_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("lyapunov.json");
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let code = bridgelab::cli::parse_and_dispatch(&args(&["discrete-run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--plot", "on"]));
        assert_eq!(code, 0);
    }
    for f in ["report.csv", "verdicts.json", "plots/lyapunov_weighted_gap.svg"] {
        assert_eq!(std::fs::read(dir.path().join("a").join(f)).unwrap(), std::fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn several_configs_fan_out() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (configs().join("golden_scalar.json"), configs().join("gaussian_random.json"));
    let code = bridgelab::cli::parse_and_dispatch(&args(&["verify", "--config", a.to_str().unwrap(), "--config", b.to_str().unwrap(), "--jobs", "2", "--out", dir.path().to_str().unwrap()]));
    assert_eq!(code, 0);
    assert!(dir.path().join("golden_scalar/verdicts.json").exists());
    assert!(dir.path().join("gaussian_random/verdicts.json").exists());
}
