//! End-to-end checks of the `labelsift` binary: artifact formats, exit
//! codes, and stdout shapes that scripts depend on.

use std::path::Path;
use std::process::{Command, Output};

use labelsift::data;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_labelsift")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn labelsift")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn generate(path: &Path, extra: &[&str]) {
    let mut args = vec![
        "generate", "--n", "120", "--k", "3", "--d", "4", "--seed", "5", "--out",
    ];
    let path_str = path.to_str().unwrap();
    args.push(path_str);
    args.extend_from_slice(extra);
    run_ok(&args);
}

#[test]
fn generate_is_deterministic_and_parseable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ds");
    let b = dir.path().join("b.ds");
    generate(&a, &["--noise", "symmetric", "--ratio", "0.2"]);
    generate(&b, &["--noise", "symmetric", "--ratio", "0.2"]);
    assert_eq!(
        std::fs::read(&a).unwrap(),
        std::fs::read(&b).unwrap(),
        "same flags should reproduce the dataset byte for byte"
    );

    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().next().unwrap(), "d=4 K=3 n=120");
    let ds = data::read_dataset(&a).unwrap();
    assert_eq!(ds.len(), 120);
    let flipped = ds
        .samples
        .iter()
        .filter(|s| s.noisy_label != s.true_label)
        .count();
    let realized = flipped as f64 / ds.len() as f64;
    assert!(
        (0.08..=0.32).contains(&realized),
        "realized flip rate {realized} far from requested 0.2"
    );

    let manifest = std::fs::read_to_string(dir.path().join("a.ds.manifest")).unwrap();
    assert!(manifest.contains("ratio = 0.2"), "manifest:\n{manifest}");
    assert!(manifest.contains("seed = 5"), "manifest:\n{manifest}");
}

#[test]
fn train_zero_epochs_writes_header_only_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("tiny.ds");
    generate(&ds, &[]);
    let out_dir = dir.path().join("run");
    let out = run_ok(&[
        "train",
        "--data",
        ds.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--epochs",
        "0",
    ]);
    assert!(stdout(&out).contains("trained 0 epochs"));

    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1, "expected header only:\n{metrics}");
    assert!(out_dir.join("checkpoint_final.ckpt").exists());
    assert!(out_dir.join("manifest.txt").exists());
}

#[test]
fn eval_prints_metric_table_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("tiny.ds");
    generate(&ds, &["--noise", "symmetric", "--ratio", "0.2"]);
    let run_dir = dir.path().join("run");
    run_ok(&[
        "train",
        "--data",
        ds.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--epochs",
        "2",
    ]);

    let eval_dir = dir.path().join("evalout");
    let ckpt = run_dir.join("checkpoint_final.ckpt");
    let out = run_ok(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        ds.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    let text = stdout(&out);
    for name in ["accuracy", "knn_accuracy", "detection_auc", "imbalance_ratio"] {
        assert!(
            text.lines().any(|l| l.starts_with(name)),
            "missing {name} row in:\n{text}"
        );
    }

    let csv = std::fs::read_to_string(eval_dir.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "metric,value");
    assert_eq!(csv.lines().count(), 5, "csv:\n{csv}");
}

#[test]
fn eval_rejects_mismatched_checkpoint_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("tiny.ds");
    generate(&ds, &[]);
    let run_dir = dir.path().join("run");
    run_ok(&[
        "train",
        "--data",
        ds.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--epochs",
        "1",
    ]);

    let other = dir.path().join("wide.ds");
    run_ok(&[
        "generate", "--n", "60", "--k", "3", "--d", "6", "--seed", "5", "--out",
        other.to_str().unwrap(),
    ]);
    let ckpt = run_dir.join("checkpoint_final.ckpt");
    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        other.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("error:"));
}

#[test]
fn usage_errors_exit_1() {
    let out = run(&["train", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(1));

    // Required keys missing from both flags and config file.
    let out = run(&["generate", "--n", "10"]);
    assert_eq!(out.status.code(), Some(1), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("--out"), "stderr: {}", stderr(&out));
}

#[test]
fn help_and_version_exit_0() {
    let out = run_ok(&["--version"]);
    assert!(stdout(&out).contains(env!("CARGO_PKG_VERSION")));
    let out = run_ok(&["--help"]);
    assert!(stdout(&out).contains("generate"));
    assert!(stdout(&out).contains("train"));
    assert!(stdout(&out).contains("eval"));
}
