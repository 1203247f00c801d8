use std::process::Command;

fn ssense(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ssense")).args(args).env("RUST_LOG", "warn").output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"dataset": {"frames": 2}}"#).unwrap();
    let out = dir.path().join("data");
    let (code, err) = ssense(&["generate", "--desk", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("frames"), "{err}");

    std::fs::write(&bad, "{not json").unwrap();
    assert_eq!(ssense(&["run-all", "--desk", "--config", bad.to_str().unwrap()]).0, 2);
}

#[test]
fn missing_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let (code, err) = ssense(&["train", "--desk", "--data", missing.to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
    let ckpt = dir.path().join("x.sswt");
    std::fs::write(&ckpt, b"garbage").unwrap();
    let (code, _) = ssense(&["evaluate", "--ckpt", ckpt.to_str().unwrap(), "--data", missing.to_str().unwrap()]);
    assert_eq!(code, 3);
}

#[test]
fn usage_errors_are_reported_by_clap() {
    assert_eq!(ssense(&["attack", "--kind", "cw"]).0, 2);
    assert_eq!(ssense(&["--help"]).0, 0);
}

#[test]
fn generate_then_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let (code, err) = ssense(&["generate", "--desk", "--seed", "3", "--frames", "6", "--out", data.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(data.join("manifest.json").exists());
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, r#"{"arch": {"base_width": 2, "depth": 1}, "train": {"epochs": 1}}"#).unwrap();
    let ckpt = dir.path().join("t.sswt");
    let (code, err) = ssense(&[
        "train", "--desk", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let out = Command::new(env!("CARGO_BIN_EXE_ssense"))
        .args(["evaluate", "--ckpt", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with(",Average,5G,LTE,Noise\n"), "{text}");
    assert!(text.contains("\nIoU,"));
}
