use std::path::PathBuf;
use std::process::Command;

fn unet() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_unet"));
    c.env("RUST_LOG", "warn");
    c
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/smoke.toml")
}

#[test]
fn run_prints_report_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    let out = unet().arg("run").arg(fixture()).arg("--csv").arg(&csv).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["name"], "smoke");
    assert_eq!(report["roster"].as_array().unwrap().len(), 3);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("time_ms,metric,value,unit,module,protocol,scenario\n"));
}

#[test]
fn seed_flag_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for (i, seed) in ["5", "5", "6"].iter().enumerate() {
        let csv = dir.path().join(format!("{i}.csv"));
        let st = unet().arg("run").arg(fixture()).args(["--seed", seed, "--csv"]).arg(&csv).output().unwrap();
        assert!(st.status.success());
        texts.push(std::fs::read_to_string(&csv).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    assert_ne!(texts[0], texts[2]);
}

#[test]
fn scenario_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\nduration_s = 10.0\nmesh_profile = \"Nope\"\n[[gateway]]\nid = \"GW-1\"\nposition = [0.0, 0.0, 0.0]\n").unwrap();
    for path in [bad, dir.path().join("missing.toml")] {
        let out = unet().arg("run").arg(&path).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{path:?}");
        assert!(!out.stderr.is_empty());
    }
    let out = unet().args(["experiment", "e2e", "--profile", "Nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn experiment_gateway_writes_series() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("g.csv");
    let out = unet()
        .args(["experiment", "gateway", "--case", "c3", "--duration-s", "4", "--csv"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("gateway C3"));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.lines().any(|l| l.contains(",PROC_DELAY,") && l.ends_with(",C3")));
}

#[test]
fn experiment_task_reports_each_service() {
    let out = unet().args(["experiment", "task", "--profile", "TPLink WR902AC", "--trials", "40"]).output().unwrap();
    assert!(out.status.success());
    let s = String::from_utf8_lossy(&out.stdout);
    assert!(s.contains("ARM_THROTTLE") && s.contains("SET_MODE"), "{s}");
}
