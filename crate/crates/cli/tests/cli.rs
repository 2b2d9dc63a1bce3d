//! Black-box tests of the binary: exit codes, usage errors, artifact layout.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> PathBuf {
    // target/<profile>/forgeloc next to the test binary's directory
    let mut path = std::env::current_exe().unwrap();
    path.pop();
    if path.ends_with("deps") {
        path.pop();
    }
    path.join("forgeloc")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("forgeloc-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn version_exits_zero() {
    let out = run(&["version"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("forgeloc"));
}

#[test]
fn unknown_subcommand_exits_one_with_usage() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage"), "stderr: {text}");
}

#[test]
fn eval_without_checkpoint_names_the_flag() {
    let out = run(&["eval", "--manifest", "m.jsonl", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("--checkpoint"), "stderr: {text}");
}

#[test]
fn help_exits_zero_and_documents_flags() {
    for sub in [
        "synth",
        "pretrain-codec",
        "train",
        "eval",
        "robustness",
        "ablate",
        "theory",
    ] {
        let out = run(&[sub, "--help"]);
        assert!(out.status.success(), "{sub} --help failed");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("--out"), "{sub} help misses --out: {text}");
    }
}

#[test]
fn theory_writes_report_and_exits_zero() {
    let dir = tmp("theory");
    let out = run(&["theory", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    let report = std::fs::read_to_string(dir.join("theory_report.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(value["fold_max_err"].as_f64().unwrap() <= 1e-9);
    assert!(dir.join("run_manifest.json").exists());
}

#[test]
fn synth_writes_dataset_and_manifest() {
    let dir = tmp("synth");
    let out = run(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--count",
        "6",
        "--size",
        "32",
        "--kinds",
        "splice,pristine",
        "--seed",
        "5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("manifest.jsonl").exists());
    let pngs = std::fs::read_dir(&dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "png")
        })
        .count();
    assert_eq!(pngs, 12); // 6 images + 6 masks
}

#[test]
fn synth_rejects_unknown_kind() {
    let dir = tmp("synth-bad");
    let out = run(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--kinds",
        "morph",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_with_missing_checkpoint_dir_is_validation_error() {
    let dir = tmp("eval-missing");
    let out = run(&[
        "eval",
        "--checkpoint",
        "/nonexistent/ckpt",
        "--manifest",
        dir.join("m.jsonl").to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn corrupt_checkpoint_is_runtime_error() {
    let dir = tmp("eval-corrupt");
    let ckpt = dir.join("ckpt");
    std::fs::create_dir_all(&ckpt).unwrap();
    std::fs::write(ckpt.join("model_spec.json"), "{ not json").unwrap();
    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        dir.join("m.jsonl").to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_rejects_unknown_override_key() {
    let dir = tmp("override");
    let config = dir.join("config.json");
    std::fs::write(&config, r#"{"epochs": 5, "warmup_epochs": 1}"#).unwrap();
    let out = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--manifest",
        dir.join("m.jsonl").to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--set",
        "bogus_key=3",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("bogus_key"), "stderr: {text}");
}

fn write_tiny_config(dir: &Path, codec: &Path) -> PathBuf {
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "epochs": 1,
            "warmup_epochs": 1,
            "batch_size": 2,
            "seed": 3,
            "codec_checkpoint": codec,
        })
        .to_string(),
    )
    .unwrap();
    config
}

/// Full command pipeline at toy scale: synth -> pretrain-codec -> train ->
/// eval -> robustness, checking artifact layout and idempotent reruns.
#[test]
fn pipeline_round_trip_and_idempotence() {
    let dir = tmp("pipeline");
    let data = dir.join("data");
    let run_ok = |args: &[&str]| {
        let out = run(args);
        assert!(
            out.status.success(),
            "command {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };

    run_ok(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--count",
        "8",
        "--size",
        "32",
        "--seed",
        "1",
    ]);
    let manifest = data.join("manifest.jsonl");

    let codec_dir = dir.join("codec");
    run_ok(&[
        "pretrain-codec",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        codec_dir.to_str().unwrap(),
        "--set",
        "epochs=2",
        "--set",
        "seed=9",
    ]);
    assert!(codec_dir.join("weights.bin").exists());
    assert!(codec_dir.join("codec_spec.json").exists());

    let config = write_tiny_config(&dir, &codec_dir);
    let train_out = dir.join("run");
    run_ok(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        train_out.to_str().unwrap(),
    ]);
    let ckpt = train_out.join("checkpoint");
    assert!(ckpt.join("manifest.json").exists());
    assert!(train_out.join("loss_curve.png").exists());
    assert!(train_out.join("train_log.jsonl").exists());

    let eval_a = dir.join("eval_a");
    let eval_b = dir.join("eval_b");
    for out in [&eval_a, &eval_b] {
        run_ok(&[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--manifest",
            manifest.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--overlays",
            "1",
        ]);
    }
    // identical inputs give byte-identical reports (timestamps live only in
    // the run manifest)
    let a = std::fs::read(eval_a.join("report.json")).unwrap();
    let b = std::fs::read(eval_b.join("report.json")).unwrap();
    assert_eq!(a, b);
    assert!(eval_a.join("overlays").read_dir().unwrap().next().is_some());

    let rob = dir.join("rob");
    run_ok(&[
        "robustness",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--grid",
        "jpeg=80;noise=0.1",
        "--out",
        rob.to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(rob.join("report.json")).unwrap()).unwrap();
    let summary = report["summary"].as_object().unwrap();
    assert_eq!(summary.len(), 3); // none, jpeg80, noise0.1
    assert!(rob.join("f1_vs_level.png").exists());
}
