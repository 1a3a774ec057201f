use std::path::Path;
use std::process::{Command, Output};

use fsd_core::eval::AblationSpec;
use fsd_core::nn::{save_weights, Weights};

fn fsd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsd"))
        .current_dir(dir)
        .env_remove("FSD_SEED")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

fn write_model(dir: &Path) {
    let spec = AblationSpec::ladder()[4].model_spec();
    save_weights(&Weights::init(&spec, 1).unwrap(), &dir.join("m.pnet")).unwrap();
}

#[test]
fn track_gen_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["a.json", "b.json"] {
        let out = fsd(tmp.path(), &["track", "gen", "--seed", "7", "--style", "curvy", "--length", "500", "--out", name]);
        let r = report(&out);
        assert_eq!(r["config"]["seed"], 7);
    }
    let a = std::fs::read(tmp.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(tmp.path().join("b.json")).unwrap());
    let other = fsd(tmp.path(), &["track", "gen", "--seed", "8", "--style", "curvy", "--length", "500", "--out", "c.json"]);
    assert!(other.status.success());
    assert_ne!(a, std::fs::read(tmp.path().join("c.json")).unwrap());
}

#[test]
fn seed_falls_back_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fsd"))
        .current_dir(tmp.path())
        .env("FSD_SEED", "42")
        .args(["track", "gen", "--style", "line", "--length", "100", "--out", "t.json"])
        .output()
        .unwrap();
    assert_eq!(report(&out)["config"]["seed"], 42);
}

#[test]
fn config_file_and_overrides_are_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("fsd.json"), r#"{"seed": 3, "sim": {"v_max": 5.0}}"#).unwrap();
    let out = fsd(
        tmp.path(),
        &["track", "gen", "--style", "line", "--length", "100", "--out", "t.json", "--set", "cam.fov_deg=64"],
    );
    let r = report(&out);
    assert_eq!(r["config"]["seed"], 3);
    assert_eq!(r["config"]["sim"]["v_max"], 5.0);
    assert_eq!(r["config"]["cam"]["fov_deg"], 64.0);
    assert_eq!(r["config"]["sim"]["wheelbase"], 1.55);
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = fsd(tmp.path(), &["track", "gen", "--bogus"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(!unknown.stderr.is_empty());
    let bad_key = fsd(tmp.path(), &["track", "gen", "--out", "t.json", "--set", "sim.nope=1"]);
    assert_eq!(bad_key.status.code(), Some(1));
    let missing = fsd(tmp.path(), &["eval", "loop", "--model", "none.pnet", "--track", "none.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn eval_loop_prints_the_result() {
    let tmp = tempfile::tempdir().unwrap();
    write_model(tmp.path());
    assert!(fsd(tmp.path(), &["track", "gen", "--style", "line", "--length", "200", "--out", "t.json"]).status.success());
    let out = fsd(
        tmp.path(),
        &["eval", "loop", "--model", "m.pnet", "--track", "t.json", "--cap", "3", "--csv", "traj.csv"],
    );
    let r = report(&out);
    let d = r["report"]["duration_s"].as_f64().unwrap();
    assert!(d > 0.0 && d <= 3.0);
    assert!(r["report"]["off_track"].is_boolean());
    let csv = std::fs::read_to_string(tmp.path().join("traj.csv")).unwrap();
    assert!(csv.starts_with("t,s,d,y,v\n"));
}

#[test]
fn stream_writes_whole_frames() {
    let tmp = tempfile::tempdir().unwrap();
    write_model(tmp.path());
    assert!(fsd(tmp.path(), &["track", "gen", "--style", "line", "--length", "200", "--out", "t.json"]).status.success());
    let out = fsd(tmp.path(), &["stream", "--model", "m.pnet", "--track", "t.json", "--cap", "1", "--out", "-"]);
    assert!(out.status.success());
    assert_eq!(out.stdout.len(), 30 * 8);
    let mut dec = fsd_core::wire::StreamDecoder::new();
    let frames = dec.push(&out.stdout);
    assert_eq!(frames.len(), 30);
    assert!(frames.iter().enumerate().all(|(i, f)| f.seq == i as u8));
}
