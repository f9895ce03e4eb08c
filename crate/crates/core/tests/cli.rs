use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ilro::experiments::csv::read_csv;

const BIN: &str = env!("CARGO_BIN_EXE_ilro");

const CONFIG: &str = r#"{
  "oscillator": {
    "n_stages": 4,
    "stage": {"r_load": 1000, "c_load": 2.2736420441699336e-14, "gm_peak": 0.001},
    "injection_ratio": 0.1,
    "f_inj": 7e9
  },
  "sweep": {"k_values": [0.05, 0.2], "f_fr_step_hz": 250000000}
}"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

fn ilro(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

#[test]
fn version_flag() {
    let out = ilro(&["--version"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.trim(), format!("ilro {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn lock_run_writes_tables_and_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out_dir = tmp.path().join("out");
    let out = ilro(&["lock", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let (header, rows) = read_csv(&out_dir.join("lock.csv")).unwrap();
    assert_eq!(header[0], "k_inj");
    assert_eq!(rows.len(), 1);
    let locked = header.iter().position(|h| h == "locked").unwrap();
    assert_eq!(rows[0][locked], "1");
    let f_fr: f64 = rows[0][2].parse().unwrap();
    assert!((f_fr / 7e9 - 1.0).abs() < 1e-11);

    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["experiment"], "lock");
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
    assert!(meta["elapsed_seconds"].as_f64().unwrap() >= 0.0);
    let config = &meta["config"];
    assert_eq!(config["sim"]["samples_per_period"], 256);
    assert_eq!(config["oscillator"]["stages"].as_array().unwrap().len(), 4);
    assert_eq!(config["oscillator"]["injection_phases_deg"][2], 90.0);
    assert_eq!(config["output_dir"], out_dir.to_str().unwrap());
}

#[test]
fn sweep_output_identical_across_job_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let mut runs = Vec::new();
    for jobs in ["1", "2", "4"] {
        let dir = tmp.path().join(format!("j{jobs}"));
        let out = ilro(&[
            "sensitivity-vs-ffr",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--jobs",
            jobs,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let a = fs::read(dir.join("sensitivity_vs_ffr_k0.05.csv")).unwrap();
        let b = fs::read(dir.join("sensitivity_vs_ffr_k0.2.csv")).unwrap();
        runs.push((a, b));
    }
    assert!(runs.windows(2).all(|w| w[0] == w[1]));
    assert!(!runs[0].0.is_empty());
}

#[test]
fn seed_flag_reaches_metadata() {
    let tmp = tempfile::tempdir().unwrap();
    let text = CONFIG.replace("\"sweep\"", "\"mismatch\": {\"n_samples\": 10}, \"mc_solver\": \"phasor\", \"sweep\"");
    let cfg = write_config(tmp.path(), &text);
    let dir = tmp.path().join("mc");
    let out = ilro(&["monte-carlo", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--seed", "42"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 42);
    let (header, rows) = read_csv(&dir.join("monte_carlo_raw.csv")).unwrap();
    assert_eq!(header, ["k_inj", "sample_index", "phase_error_deg"]);
    assert_eq!(rows.len(), 20);
}

#[test]
fn out_of_range_ratio_is_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &CONFIG.replace("\"injection_ratio\": 0.1", "\"injection_ratio\": 1.5"));
    let out = ilro(&["lock", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"].as_str().unwrap().contains("injection_ratio"));
}

#[test]
fn duplicate_key_is_parse_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &CONFIG.replace("\"f_inj\": 7e9", "\"f_inj\": 7e9, \"f_inj\": 7e9"));
    let out = ilro(&["lock", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(err.contains("line 6") && err.contains("duplicate field"), "{err}");
}

#[test]
fn conflicting_experiment_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &CONFIG.replacen('{', "{\"experiment\": \"simulate\",", 1));
    let out = ilro(&["lock", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_config_is_io_error() {
    let out = ilro(&["lock", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_experiment_is_usage_error() {
    let out = ilro(&["sideways", "--config", "x.json"]);
    assert_eq!(out.status.code(), Some(1));
}
