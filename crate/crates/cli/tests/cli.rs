//! End-to-end tests driving the compiled `sipservo` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sipservo_core::harness::{Axis, Scenario, TRIAL_CSV_HEADER};
use sipservo_core::{ImageSpec, Template};

fn sipservo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sipservo")).args(args).output().expect("binary launches")
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

/// Small, fast variant of the default scenario for end-to-end runs.
fn small_scenario() -> Scenario {
    let mut s = Scenario::default();
    s.image = ImageSpec { width: 128, height: 128, ..ImageSpec::default() };
    s.control_rate_hz = 500.0;
    s.duration_s = 2.5;
    s.offset.meters = 0.005;
    s.seed = 7;
    s.repeats = 1;
    s
}

fn write_scenario(dir: &Path, scenario: &Scenario) -> PathBuf {
    let path = dir.join("scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(scenario).unwrap()).unwrap();
    path
}

fn read_summary(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("summary.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn shipped_scenarios_parse_and_default_matches_builtin() {
    assert_eq!(Scenario::from_path(&shipped("default.json")).unwrap(), Scenario::default());
    for name in ["default.json", "human.json", "decay.json"] {
        let scenario = Scenario::from_path(&shipped(name)).unwrap();
        let warnings = scenario.validate().unwrap();
        assert!(warnings.is_empty(), "{name}: {warnings:?}");
    }
}

#[test]
fn run_writes_logs_and_exits_zero_on_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), &small_scenario());
    let out_dir = dir.path().join("out");
    let out = sipservo(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(0), "stdout: {stdout}\nstderr: {stderr}");
    assert!(stdout.contains("converged"), "stdout: {stdout}");

    // One row per control step at 500 Hz for 2.5 s.
    let csv = std::fs::read_to_string(out_dir.join("trial.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(TRIAL_CSV_HEADER));
    assert_eq!(lines.count(), 1250);

    let summary = read_summary(&out_dir);
    assert_eq!(summary["repeats"], 1);
    assert_eq!(summary["converged"], 1);
    assert_eq!(summary["aborted"], 0);
}

#[test]
fn arm_rig_override_also_converges() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), &small_scenario());
    let out_dir = dir.path().join("out");
    let out = sipservo(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--rig",
        "arm",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("trial.csv").exists());
}

#[test]
fn run_exits_two_when_contact_is_lost() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = small_scenario();
    // Lifting the probe 20 mm exceeds the 5 mm contact-gap limit immediately.
    s.offset.axis = Axis::Z;
    s.offset.meters = 0.02;
    s.duration_s = 1.0;
    let scenario = write_scenario(dir.path(), &s);
    let out_dir = dir.path().join("out");
    let out = sipservo(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("aborted_loss_of_contact"));
    assert_eq!(read_summary(&out_dir)["aborted"], 1);
}

#[test]
fn run_exits_one_when_the_trial_completes_without_converging() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = small_scenario();
    s.duration_s = 0.5;
    let scenario = write_scenario(dir.path(), &s);
    let out_dir = dir.path().join("out");
    let out = sipservo(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("completed"));
}

#[test]
fn run_rejects_a_scenario_with_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("bad.json");
    std::fs::write(&scenario, r#"{ "durationn_s": 5.0 }"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = sipservo(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn equal_seeds_reproduce_byte_identical_csv_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), &small_scenario());
    let csv = |seed: &str, sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = sipservo(&[
            "run",
            "--scenario",
            scenario.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.code().is_some(), "binary crashed");
        std::fs::read(out_dir.join("trial.csv")).unwrap()
    };
    let a = csv("123", "a");
    let b = csv("123", "b");
    let c = csv("124", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn dump_frames_writes_one_pgm_per_perception_step() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = small_scenario();
    s.duration_s = 0.5;
    let scenario = write_scenario(dir.path(), &s);
    let out_dir = dir.path().join("out");
    let out = sipservo(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--dump-frames",
    ]);
    assert!(out.status.code().is_some());

    // 250 steps with a perception update every ⌊500/30⌋ = 16 steps.
    let pgms: Vec<PathBuf> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    assert_eq!(pgms.len(), 16);

    let first = std::fs::read(out_dir.join("frame_00000.pgm")).unwrap();
    let header = b"P5\n128 128\n255\n";
    assert!(first.starts_with(header));
    assert_eq!(first.len(), header.len() + 128 * 128);
}

#[test]
fn template_export_round_trips_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("template.json");
    let out = sipservo(&["template", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let bytes = std::fs::read(&path).unwrap();
    let template: Template = serde_json::from_slice(&bytes).unwrap();
    assert!(!template.pleural_line.is_empty());
    assert!(template.rib_shadow.len() >= 2);
    let again = serde_json::to_string_pretty(&template).unwrap() + "\n";
    assert_eq!(bytes, again.into_bytes());
}
