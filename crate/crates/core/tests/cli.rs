use std::path::Path;
use std::process::{Command, Output};

fn stochweave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stochweave"))
        .args(args)
        .env("STOCHWEAVE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_preset_is_a_config_error() {
    let out = stochweave(&["train", "--preset", "atari"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("atari"));
}

#[test]
fn malformed_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "steps = [not toml").unwrap();
    assert_eq!(code(&stochweave(&["train", "--config", arg(&cfg)])), 2);
    std::fs::write(&cfg, "batch_size = 0\n").unwrap();
    assert_eq!(code(&stochweave(&["train", "--config", arg(&cfg)])), 2);
}

#[test]
fn diverging_run_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lr.toml");
    std::fs::write(&cfg, "steps = 20\n[lr]\nstart = 1e150\nend = 1e150\nfraction = 1.0\ntotal = 20\n").unwrap();
    let out = stochweave(&["train", "--config", arg(&cfg), "--seed", "0", "--out", arg(dir.path())]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_eval_render_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = out.join("small.json");
    std::fs::write(
        &cfg,
        r#"{"probe": {"states": 5, "samples": 200}, "val_size": 50, "test_size": 50, "eval_samples": 5}"#,
    )
    .unwrap();
    let r = stochweave(&[
        "train", "--preset", "grid", "--config", arg(&cfg), "--variant", "vae-discrete", "--steps", "30",
        "--seed", "1", "--out", arg(out),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(out.join("report.json").exists() && out.join("report.csv").exists());
    let ckpt = out.join("seed-1").join("model.bin");
    assert!(ckpt.exists());

    let eval_dir = out.join("eval");
    let common = ["--preset", "grid", "--config", arg(&cfg), "--seed", "1"];
    let mut args = vec!["eval", "--checkpoint", arg(&ckpt), "--out", arg(&eval_dir)];
    args.extend(common);
    assert_eq!(code(&stochweave(&args)), 0);
    assert!(eval_dir.join("report.json").exists());

    let render_dir = out.join("render");
    let mut args = vec!["render", "--checkpoint", arg(&ckpt), "--count", "2", "--out", arg(&render_dir)];
    args.extend(common);
    assert_eq!(code(&stochweave(&args)), 0);
    assert!(render_dir.join("prediction-001.svg").exists());

    let rep = stochweave(&["report", arg(out), arg(&eval_dir)]);
    assert_eq!(code(&rep), 0);
    assert!(String::from_utf8_lossy(&rep.stdout).contains("vae-discrete"));
}

#[test]
fn gen_data_writes_toy_csv() {
    let dir = tempfile::tempdir().unwrap();
    let r = stochweave(&["gen-data", "--preset", "toy", "--seed", "3", "--out", arg(dir.path())]);
    assert_eq!(code(&r), 0);
    let train = std::fs::read_to_string(dir.path().join("train.csv")).unwrap();
    assert!(train.starts_with("x,y\n"));
    assert!(train.lines().count() > 100);
}
