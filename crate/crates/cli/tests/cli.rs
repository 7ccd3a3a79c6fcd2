//! End-to-end runs of the `reid-bench` binary on tiny synthetic data.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reid-bench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY: &str = r#"
seed = 4

[data]
resolution = 16

[synth]
n_identities = 12
resolution = 32

[model]
trunk = "tiny"
pool_grid = 2
pool_size = 2
reduce_channels = 8
hidden = 16

[verif]
max_epochs = 2

[reid]
phase1_epochs = 1
phase2_epochs = 1
batch_size = 8

[eval]
n_boot = 200
"#;

/// Writes `TINY` with `top` prepended, `checkpoint` set in `[model]` and
/// `extra` appended; returns the path.
fn write_config(dir: &Path, name: &str, top: &str, checkpoint: Option<&Path>, extra: &str) -> String {
    let mut text = format!("{top}\n{TINY}\n{extra}");
    if let Some(ckpt) = checkpoint {
        text = text.replace("hidden = 16", &format!("hidden = 16\ncheckpoint = \"{}\"", ckpt.display()));
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn run_task(task: &str, config: &str, out: &Path) -> Output {
    bench(&[task, "--config", config, "--out", out.to_str().unwrap()])
}

#[test]
fn unknown_task_is_a_validation_error() {
    let out = bench(&["train-verification"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("train-verif"), "{}", stderr(&out));
}

#[test]
fn misspelled_key_names_the_nearest_valid_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[verif]\nlearning_rat = 0.01\n").unwrap();
    let out = bench(&["train-verif", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("learning_rat") && err.contains("learning_rate"), "{err}");
}

#[test]
fn every_invalid_field_is_reported_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[verif]\nbatch_size = -3\npatience = \"five\"\n[eval]\nthreshold = 2.0\n").unwrap();
    let out = bench(&["train-verif", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    for key in ["batch_size", "patience", "threshold"] {
        assert!(err.contains(key), "missing {key} in {err}");
    }
}

#[test]
fn missing_config_file_is_a_validation_error() {
    let out = bench(&["split", "--config", "/nonexistent/run.toml"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn task_failure_exits_with_one_and_marks_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ckpt");
    let cfg = write_config(dir.path(), "eval.toml", "", Some(&missing), "");
    let out_dir = dir.path().join("run");
    let out = run_task("eval-verif", &cfg, &out_dir);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(out_dir.join("FAILED").exists());
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["status"], "failed");
}

#[test]
fn verification_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", "", None, "");

    let split_dir = dir.path().join("split");
    assert_eq!(code(&run_task("split", &cfg, &split_dir)), 0);
    assert!(split_dir.join("split.csv").exists());

    let mine_dir = dir.path().join("mine");
    assert_eq!(code(&run_task("mine", &cfg, &mine_dir)), 0);
    for f in ["train_pairs.csv", "val_pairs.csv", "test_pairs.csv", "pairs_summary.json"] {
        assert!(mine_dir.join(f).exists(), "{f}");
    }

    let train_dir = dir.path().join("train");
    let out = run_task("train-verif", &cfg, &train_dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["model.ckpt", "history.csv", "train_summary.json", "resolved_config.toml", "run.json"] {
        assert!(train_dir.join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(train_dir.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_loss,val_metric,lr"));

    let eval_cfg = write_config(dir.path(), "eval.toml", "", Some(&train_dir.join("model.ckpt")), "");
    let first = dir.path().join("eval1");
    let second = dir.path().join("eval2");
    for d in [&first, &second] {
        let out = run_task("eval-verif", &eval_cfg, d);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for f in ["verification_report.json", "verification_report.csv", "roc.csv", "scores.csv"] {
        let a = fs::read(first.join(f)).unwrap();
        let b = fs::read(second.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.join("verification_report.json")).unwrap()).unwrap();
    let auc = report["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert!(report["ci_low"].as_f64().unwrap() <= report["ci_high"].as_f64().unwrap());

    let explain_dir = dir.path().join("explain");
    let out = run_task("explain", &eval_cfg, &explain_dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(explain_dir.join("explain.json").exists());
}

#[test]
fn retrieval_pipeline_and_attack() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", "", None, "");
    let train_dir = dir.path().join("train");
    let out = run_task("train-reid", &cfg, &train_dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(train_dir.join("model.ckpt").exists());
    assert!(train_dir.join("lr_trace.csv").exists());

    let eval_cfg = write_config(
        dir.path(),
        "eval.toml",
        "",
        Some(&train_dir.join("model.ckpt")),
        "[attack]\nresolutions = [24]\n",
    );
    let eval_cfg = eval_cfg.as_str();

    let eval_dir = dir.path().join("eval");
    let out = run_task("eval-reid", eval_cfg, &eval_dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("retrieval_report.json")).unwrap()).unwrap();
    assert!(report["map_at_r"].as_f64().is_some());

    let attack_dir = dir.path().join("attack");
    let out = run_task("attack", eval_cfg, &attack_dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["index.bin", "attack_report.json", "per_query.csv"] {
        assert!(attack_dir.join(f).exists(), "{f}");
    }
    let attack: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(attack_dir.join("attack_report.json")).unwrap()).unwrap();
    // Gallery and queries are the same split with self excluded, so the
    // hit rate at 1 is the retrieval precision at 1.
    assert_eq!(attack["hit_rate"]["1"], attack["retrieval"]["precision_at_1"]);
}

#[test]
fn sweep_writes_one_config_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "base.toml", "task = \"train-verif\"", None, "");
    let out_dir = dir.path().join("sweep");
    let out = bench(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
        "--set",
        "verif.learning_rate=0.001,0.0001",
        "--set",
        "mining.mode=FTS,RNP",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut names: Vec<String> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["run_000.toml", "run_001.toml", "run_002.toml", "run_003.toml"]);
    let bad = bench(&["sweep", "--config", &cfg, "--set", "verif.learning_rat=1"]);
    assert_eq!(code(&bad), 2);
}
