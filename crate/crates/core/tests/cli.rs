use std::path::Path;
use std::process::{Command, Output};

use ibf_core::harness::read_reports;

fn ibf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ibf")).args(args).output().expect("spawn ibf")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn run_toy(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--domain", "toy", "--condition", "full", "--seeds", "2", "--out"];
    args.push(out.to_str().unwrap());
    args.extend_from_slice(extra);
    ibf(&args)
}

#[test]
fn run_writes_one_report_per_seed_and_a_timing_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_toy(dir.path(), &["--jobs", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("toy_full_0.json").is_file());
    assert!(dir.path().join("toy_full_1.json").is_file());
    assert!(dir.path().join("timing.csv").is_file());
    assert!(String::from_utf8_lossy(&o.stdout).contains("| Full |"));
    assert_eq!(read_reports(dir.path()).unwrap().len(), 2);
}

#[test]
fn reports_do_not_depend_on_job_count() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(code(&run_toy(a.path(), &["--jobs", "1"])), 0);
    assert_eq!(code(&run_toy(b.path(), &["--jobs", "4"])), 0);
    for f in ["toy_full_0.json", "toy_full_1.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn snapshots_land_in_a_directory_per_run() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_toy(dir.path(), &["--snapshots"])), 0);
    let svg = dir.path().join("toy_full_0").join("phase0_epoch05.svg");
    let text = std::fs::read_to_string(svg).unwrap();
    assert!(text.starts_with("<svg") && text.contains("class=\"particle\""));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mlp = ibf(&["run", "--domain", "toy", "--condition", "mlp", "--seeds", "1", "--out", out]);
    assert_eq!(code(&mlp), 2);
    assert_eq!(code(&run_toy(dir.path(), &["--set", "bogus=1"])), 2);
    assert_eq!(code(&run_toy(dir.path(), &["--set", "toy.eval_states=0"])), 2);
    assert_eq!(code(&run_toy(dir.path(), &["--set", "rrw.epochs=3"])), 2);
    assert_eq!(code(&ibf(&["report", out])), 2);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn config_file_values_yield_to_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "theta_create = 0.3\n[toy]\nepochs_per_phase = 4\n").unwrap();
    let out = dir.path().join("out");
    let o = run_toy(&out, &["--config", cfg.to_str().unwrap(), "--set", "theta_create=0.2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = &read_reports(&out).unwrap()[0];
    assert_eq!(r.engine.as_ref().unwrap().theta_create, 0.2);
    assert_eq!(r.spec.overrides["toy.epochs_per_phase"], serde_json::json!(4));
}

#[test]
fn report_renders_every_format() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_toy(dir.path(), &[])), 0);
    let d = dir.path().to_str().unwrap();
    let csv = ibf(&["report", d, "--format", "csv"]);
    assert_eq!(code(&csv), 0);
    assert!(String::from_utf8_lossy(&csv.stdout).starts_with("domain,condition,runs,failed"));
    assert!(dir.path().join("summary.csv").is_file());
    let json = ibf(&["report", d, "--format", "json"]);
    let rows: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(rows[0]["runs"], serde_json::json!(2));
    assert_eq!(code(&ibf(&["report", d, "--format", "xml"])), 2);
}

#[test]
fn calibrate_prints_a_record() {
    let o = ibf(&["calibrate", "--domain", "rrw", "--samples", "500"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["method"], "sibling_bleed");
    let (s, d, k) = (v["sigma_star"].as_f64().unwrap(), v["d_eff"].as_f64().unwrap(), v["kappa"].as_f64().unwrap());
    assert!((k - s / d.sqrt()).abs() < 1e-5);
    assert_eq!(code(&ibf(&["calibrate", "--domain", "toy", "--samples", "1"])), 2);
}

#[test]
fn ablation_covers_every_condition() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = ibf(&["ablation", "--domain", "toy", "--seeds", "1", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let md = std::fs::read_to_string(dir.path().join("summary.md")).unwrap();
    for label in ["Full", "No-Agency", "No-Cryst", "No-Crucible", "Passive"] {
        assert!(md.contains(&format!("| {label} |")), "{label} missing");
    }
}
