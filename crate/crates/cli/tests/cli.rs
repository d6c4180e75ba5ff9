use std::path::Path;
use std::process::{Command, Output};

fn keylab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_keylab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("KEYLAB_OUT_DIR")
        .env_remove("KEYLAB_JOBS")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn validate_config_fills_defaults_and_lists_problems() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.toml"), "").unwrap();
    let text = ok(keylab(&["validate-config", "empty.toml"], dir.path()));
    assert!(text.contains("tick_rate = 15.0"));
    assert!(text.contains("threshold = 0.75"));
    assert!(text.contains("drop_rate = 0.0"));

    std::fs::write(dir.path().join("bad.toml"), "colour = 1\n[room]\ntick_rate = 90.0\ndrop_rate = 1.5\n").unwrap();
    let out = keylab(&["validate-config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 3, "{err}");
    assert!(err.contains("colour: unknown key") && err.contains("exceeds device_rate") && err.contains("drop_rate"));
}

#[test]
fn simulate_calibrate_attack_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "prompts = 5\n").unwrap();
    ok(keylab(&["simulate", "-c", "c.toml", "--out", "t.trace", "--seed", "2", "--victims", "2", "--idle-attacker"], dir.path()));
    ok(keylab(&["calibrate", "-c", "c.toml", "--out", "calib.json", "--trace-dir", "iso"], dir.path()));
    assert!(dir.path().join("iso/isolation.trace").exists());
    let text = ok(keylab(&["attack", "--trace", "t.trace", "--calib", "calib.json", "--out", "report.json"], dir.path()));
    assert_eq!(text.lines().count(), 3, "{text}");
    let text =
        ok(keylab(&["evaluate", "--report", "report.json", "--truth", "t.trace.truth.json", "--csv", "m.csv"], dir.path()));
    assert!(text.contains("top-1 100.00%"), "{text}");
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert!(csv.starts_with("group,n,top1,top3,top5\nall,"));
}

#[test]
fn ml_train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "prompts = 20\ncalibrate = false\n").unwrap();
    ok(keylab(&["simulate", "-c", "c.toml", "--out", "a.trace", "--seed", "1", "--victims", "2"], dir.path()));
    ok(keylab(&["simulate", "-c", "c.toml", "--out", "b.trace", "--seed", "2"], dir.path()));
    ok(keylab(&["calibrate", "-c", "c.toml", "--out", "calib.json"], dir.path()));
    let text = ok(keylab(
        &[
            "ml-train", "--trace", "a.trace", "--truth", "a.trace.truth.json", "--calib", "calib.json", "--model",
            "nearest-centroid", "--out", "model.json", "--epochs", "3", "--curve", "curve.csv",
        ],
        dir.path(),
    ));
    assert!(text.contains("test top-1"), "{text}");
    let text = ok(keylab(
        &["ml-eval", "--trace", "b.trace", "--truth", "b.trace.truth.json", "--calib", "calib.json", "--checkpoint", "model.json"],
        dir.path(),
    ));
    assert!(text.contains("samples; top-1"), "{text}");

    let out = keylab(&["ml-train", "--trace", "a.trace", "--calib", "calib.json", "--out", "m.json"], dir.path());
    assert!(!out.status.success());
    let out = keylab(
        &["ml-train", "--trace", "a.trace", "--truth", "a.trace.truth.json", "--calib", "calib.json", "--model", "cnn", "--out", "m.json"],
        dir.path(),
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown model"));
}

#[test]
fn experiment_rerun_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "prompts = 4\ncalibrate = false\n").unwrap();
    let text = ok(keylab(
        &["run-experiment", "-c", "c.toml", "--scenario", "drop-sweep", "--seeds", "1,2", "--out-dir", "first", "--jobs", "2"],
        dir.path(),
    ));
    assert!(text.contains("drop_sweep.csv"));
    let csv = std::fs::read_to_string(dir.path().join("first/drop-sweep/drop_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    let text =
        ok(keylab(&["run-experiment", "--rerun", "first/drop-sweep/manifest.json", "--out-dir", "second"], dir.path()));
    assert!(text.contains("reproduced exactly"), "{text}");

    let out = Command::new(env!("CARGO_BIN_EXE_keylab"))
        .args(["run-experiment", "-c", "c.toml", "--scenario", "row-study", "--seeds", "3"])
        .current_dir(dir.path())
        .env("KEYLAB_OUT_DIR", "from-env")
        .output()
        .unwrap();
    ok(out);
    assert!(dir.path().join("from-env/row-study/rows.csv").exists());

    let out = keylab(&["run-experiment", "--scenario", "everything"], dir.path());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scenario"));
}
