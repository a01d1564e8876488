use std::path::Path;
use std::process::{Command, Output};

fn hifigaze(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hifigaze"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = hifigaze(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_exits_zero() {
    let out = hifigaze(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["gen", "extract", "train", "eval", "bench", "plot"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(hifigaze(&["gen", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(hifigaze(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hifigaze(&["train", "--features", "x", "--variant", "eb+zz", "--out", "y"]).status.code(), Some(1));
    // eval without --loocv
    assert_eq!(hifigaze(&["eval", "--features", "x", "--report", "r.json"]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let out = hifigaze(&["eval", "--features", s(&missing), "--loocv", "--report", s(&dir.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

fn pipeline(root: &Path) -> Vec<u8> {
    let (data, feat, report) = (root.join("data"), root.join("feat"), root.join("report.json"));
    ok(&["gen", "--participants", "2", "--sessions", "1", "--seed", "7", "--stride", "30", "--out", s(&data)]);
    ok(&["extract", "--manifest", s(&data.join("manifest.json")), "--out", s(&feat), "--dump-masks"]);
    ok(&[
        "eval", "--features", s(&feat), "--loocv", "--variant", "eb", "--variant", "eb+rv", "--epochs", "2", "--report",
        s(&report),
    ]);
    std::fs::read(report).unwrap()
}

#[test]
fn pipeline_is_deterministic_and_plots() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = pipeline(a.path());
    assert_eq!(ra, pipeline(b.path()));

    let report: serde_json::Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(report["variants"].as_array().unwrap().len(), 2);
    assert!(std::fs::read_dir(a.path().join("feat/masks")).unwrap().count() > 0);

    let plots = a.path().join("plots");
    ok(&["plot", "--report", s(&a.path().join("report.json")), "--out", s(&plots)]);
    for name in ["errors.svg", "spatial.svg", "brightness.svg"] {
        let svg = std::fs::read_to_string(plots.join(name)).unwrap();
        assert!(svg.starts_with("<svg"));
    }

    let model_dir = a.path().join("model");
    ok(&["train", "--features", s(&a.path().join("feat")), "--variant", "eb+rv", "--epochs", "2", "--out", s(&model_dir)]);
    assert!(model_dir.join("model.hfm").exists() && model_dir.join("history.csv").exists());

    let manifest = a.path().join("data/manifest.json");
    assert_eq!(hifigaze(&["bench", "--manifest", s(&manifest), "--frames", "2"]).status.code(), Some(2));
    let out = ok(&["bench", "--manifest", s(&manifest), "--frames", "20"]);
    let bench: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(bench["stages"].as_array().unwrap().len(), 4);
}
