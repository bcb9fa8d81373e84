use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn oodmpc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oodmpc"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {stdout}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn beta_prob_reproduces_reference_number() {
    let dir = tempfile::tempdir().unwrap();
    let out = oodmpc(
        dir.path(),
        &["beta-prob", "--n", "1000", "--delta", "0.04", "--x1", "0.95", "--x2", "0.97"],
    );
    let stdout = ok(&out);
    assert!(stdout.contains("= 0.8965"), "{stdout}");
    let report = json(&dir.path().join("out/beta_prob.json"));
    assert!((report["probability"].as_f64().unwrap() - 0.8965).abs() < 5e-4);
    let manifest = json(&dir.path().join("out/manifest_beta-prob.json"));
    assert_eq!(manifest["command"], "beta-prob");
    assert_eq!(manifest["config"]["beta"]["n"], 1000);
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn plan_calibration_meets_target() {
    let dir = tempfile::tempdir().unwrap();
    ok(&oodmpc(dir.path(), &["plan-calibration", "--p", "0.89"]));
    let r = json(&dir.path().join("out/plan_calibration.json"));
    assert!(r["probability"].as_f64().unwrap() >= 0.89);
}

#[test]
fn calibrate_picks_index_97_of_100() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("rho\n");
    for i in 0..100 {
        csv.push_str(&format!("{}\n", 0.0001 * (i as f64 + 1.0)));
    }
    fs::write(dir.path().join("scores.csv"), csv).unwrap();
    let config = r#"{"paths": {"scores": "scores.csv", "output_dir": "cal"}, "conformal": {"delta": 0.0396}}"#;
    fs::write(dir.path().join("run.json"), config).unwrap();
    ok(&oodmpc(dir.path(), &["--config", "run.json", "calibrate"]));
    let d = json(&dir.path().join("cal/detector.json"));
    assert_eq!(d["K"], 97);
    assert_eq!(d["N"], 100);
    // 0.0097 rounded up at the third decimal
    assert_eq!(d["C"].as_f64().unwrap(), 0.01);
}

#[test]
fn invalid_config_lists_fields_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = oodmpc(dir.path(), &["beta-prob", "--delta", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("beta.delta: delta in (0,1)"), "{err}");

    let out = oodmpc(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths.data"));

    let out = oodmpc(dir.path(), &["no-such-command"]);
    assert!(!out.status.success());
}

#[test]
fn gmm_detect_flags_by_max_exceedance() {
    let dir = tempfile::tempdir().unwrap();
    let step = |v: f64| format!(r#"{{"mean":[0,0],"cov":[[{v},0],[0,1]]}}"#);
    let rec = |agent: &str, t: usize, v: f64| format!(r#"{{"agent":"{agent}","t":{t},"modes":[{{"p":1.0,"steps":[{}]}}]}}"#, step(v));
    let preds = format!("[{},{},{},{}]", rec("a", 0, 0.1), rec("a", 1, 0.95), rec("b", 0, 0.933), rec("b", 1, 0.2));
    fs::write(dir.path().join("preds.json"), preds).unwrap();
    let config = r#"{"gmm": {"predictions": "preds.json", "threshold": 0.933}}"#;
    fs::write(dir.path().join("run.json"), config).unwrap();
    let stdout = ok(&oodmpc(dir.path(), &["--config", "run.json", "gmm-detect"]));
    assert!(stdout.contains("1 of 2"), "{stdout}");
    let r = json(&dir.path().join("out/gmm_report.json"));
    assert_eq!(r["agents"][0]["ood"], true);
    assert_eq!(r["agents"][1]["ood"], false);
}

/// synth -> train -> calibrate -> simulate from one config; a rerun from the
/// manifest reproduces the trial byte for byte.
#[test]
fn pipeline_composes_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
        "seed": 3,
        "synth": {"count": 14},
        "train": {"ensemble_size": 3, "n_test": 2, "optimizer": {"epochs": 2}},
        "conformal": {"delta": null, "k": 11, "round_decimals": null},
        "simulate": {"mode": "ensembles_only", "fraud": false, "trial_seed": 5, "source": 1}
    }"#;
    fs::write(dir.path().join("run.json"), config).unwrap();
    for cmd in ["synth", "train", "calibrate"] {
        ok(&oodmpc(dir.path(), &["--config", "run.json", cmd]));
    }
    let d = json(&dir.path().join("out/detector.json"));
    assert_eq!(d["N"], 12);
    assert_eq!(d["K"], 11);

    ok(&oodmpc(dir.path(), &["--config", "run.json", "simulate"]));
    let first = fs::read(dir.path().join("out/trial.json")).unwrap();
    let vehicle = fs::read_to_string(dir.path().join("out/vehicle.csv")).unwrap();
    assert!(vehicle.starts_with("step,x,y,theta,V,kappa,mode_flag\n"));
    assert_eq!(vehicle.lines().count(), 152);

    fs::copy(dir.path().join("out/manifest_simulate.json"), dir.path().join("m.json")).unwrap();
    fs::remove_file(dir.path().join("out/trial.json")).unwrap();
    ok(&oodmpc(dir.path(), &["--config", "m.json", "simulate"]));
    let second = fs::read(dir.path().join("out/trial.json")).unwrap();
    assert!(first == second, "trial report changed between identical runs");
}
