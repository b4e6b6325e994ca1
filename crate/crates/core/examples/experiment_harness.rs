//! A seeded experiment end to end: config, run, verdicts, CSV and plots.

use bridgelab::harness::{run_experiment, ExperimentConfig};

fn main() -> bridgelab::Result<()> {
    let out = std::env::temp_dir().join("bridgelab-example");
    let mut config = ExperimentConfig::from_json(
        r#"{
            "regime": "gaussian",
            "instance": {"generate": {"profile": "gaussian-random-spd", "size": [3]}},
            "iterations": 60,
            "seed": 11,
            "checks": ["riccati", "rate", "envelope"],
            "output": "unused",
            "plot": true
        }"#,
    )?;
    config.output = out.clone();
    config.apply_override("seed", "12")?;

    let report = run_experiment(&config)?;
    for v in &report.verdicts {
        println!("{:<5} {:<9} {:<24} worst residual {:.2e}", if v.pass { "ok" } else { "FAIL" }, v.group, v.check, v.worst_residual);
    }
    println!("config sha256 {}", report.provenance.config_sha256);
    println!("artifacts in {}", out.display());
    Ok(())
}
