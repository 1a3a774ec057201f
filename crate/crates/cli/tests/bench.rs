// Kept apart from the other CLI tests so no concurrent test competes for the
// CPU while timing.
use std::process::Command;

use fsd_core::eval::AblationSpec;
use fsd_core::nn::{save_weights, Weights};

#[test]
fn bench_reports_both_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = AblationSpec::ladder()[4].model_spec();
    save_weights(&Weights::init(&spec, 1).unwrap(), &tmp.path().join("m.pnet")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fsd"))
        .current_dir(tmp.path())
        .env_remove("FSD_SEED")
        .env("RUST_LOG", "warn")
        .args(["bench", "--model", "m.pnet", "--variant", "both", "--n", "100"])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let naive = r["report"]["naive"]["timing"]["mean_s"].as_f64().unwrap();
    let opt = r["report"]["optimized"]["timing"]["mean_s"].as_f64().unwrap();
    assert_eq!(r["report"]["optimized"]["timing"]["n_iterations"], 100);
    assert!(opt <= naive, "optimized {opt} vs naive {naive}");
}
