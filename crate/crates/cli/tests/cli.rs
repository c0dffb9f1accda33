use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gravity(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gravity"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_accepts_shipped_scenarios() {
    for entry in std::fs::read_dir(scenario("")).unwrap() {
        let path = entry.unwrap().path();
        let out = gravity(&["validate", path.to_str().unwrap()]);
        assert!(
            out.status.success(),
            "{}: {}",
            path.display(),
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn validate_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("baseline.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["nebulae"][0]["k"] = serde_json::json!(50);
    v["nebulae"][0]["feed"] = serde_json::json!("nothing");
    let path = dir.path().join("bad.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let out = gravity(&["validate", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("2 violation(s)"), "{err}");
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = gravity(&[
        "run",
        scenario("baseline.json").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--ticks",
        "20",
        "--seed",
        "5",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("conservation            pass"));
    for file in [
        "report.json",
        "ledger.log",
        "chains/eth/txs.log",
        "nodes/1/trace.log",
    ] {
        assert!(out_dir.join(file).exists(), "{file}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["seed"], 5);
    assert_eq!(report["ticks"], 20);

    let text = gravity(&["report", out_dir.to_str().unwrap()]);
    assert!(text.status.success());
    assert!(stdout(&text).contains("delivery success"));
    let json = gravity(&["report", out_dir.to_str().unwrap(), "--format", "json"]);
    let metrics: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert_eq!(metrics["conservation_pass"], true);
}

#[test]
fn repeated_runs_write_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = gravity(&[
            "run",
            scenario("faults.json").to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--ticks",
            "30",
        ]);
        assert!(out.status.success());
        reports.push(std::fs::read(out_dir.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn report_on_missing_dir_fails() {
    let out = gravity(&["report", "/nonexistent/run"]);
    assert!(!out.status.success());
}
