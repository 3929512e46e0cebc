//! End-to-end checks of the command-line binary: each test drives the real
//! executable on a tiny dataset and asserts on output files and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctanet"))
        .args(args)
        .output()
        .expect("binary should launch")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small dataset + model settings keeping every pipeline step fast.
const TINY: &[&str] = &[
    "--set", "num_classes=4",
    "--set", "videos_per_class=5",
    "--set", "min_frames=6",
    "--set", "max_frames=8",
    "--set", "image_side=32",
    "--set", "frames_per_video=4",
    "--set", "trunk=8x5s3",
    "--set", "head=12x3s2",
    "--set", "qk_channels=2",
    "--set", "hidden_width=8",
    "--set", "epochs=2",
];

fn generate_tiny(dir: &Path) {
    let mut args = vec![
        "generate",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        "3",
    ];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert!(out.status.success(), "generate failed: {}", stderr(&out));
    assert!(stdout(&out).contains("wrote 20 videos"), "{}", stdout(&out));
}

fn train_tiny(data: &Path, out_dir: &Path) -> Output {
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    out
}

#[test]
fn generate_writes_identical_bytes_for_identical_seeds() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    generate_tiny(a.path());
    generate_tiny(b.path());
    let mut names: Vec<String> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.contains(&"index.csv".to_string()));
    assert!(names.iter().filter(|n| n.ends_with(".bin")).count() == 20);
    for name in names {
        let x = fs::read(a.path().join(&name)).unwrap();
        let y = fs::read(b.path().join(&name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical generate runs");
    }
}

#[test]
fn train_writes_metrics_checkpoints_and_log() {
    let data = TempDir::new().unwrap();
    let out_dir = TempDir::new().unwrap();
    generate_tiny(data.path());
    let out = train_tiny(data.path(), out_dir.path());
    assert!(stdout(&out).contains("trained 2 epochs"), "{}", stdout(&out));
    assert!(stdout(&out).contains("best val_acc"), "{}", stdout(&out));

    let metrics = fs::read_to_string(out_dir.path().join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("epoch,step,lr,train_loss,train_acc,val_acc"));
    assert_eq!(lines.count(), 2, "one row per epoch");
    for file in ["checkpoint_final.ckpt", "config.effective", "train.log"] {
        assert!(out_dir.path().join(file).exists(), "{file} missing");
    }
    let log = fs::read_to_string(out_dir.path().join("train.log")).unwrap();
    assert!(log.contains("dataset_hash"), "{log}");
    assert!(log.contains("split_hash"), "{log}");
}

#[test]
fn eval_reports_accuracy_and_writes_confusion() {
    let data = TempDir::new().unwrap();
    let run_dir = TempDir::new().unwrap();
    let eval_dir = TempDir::new().unwrap();
    generate_tiny(data.path());
    train_tiny(data.path(), run_dir.path());

    let checkpoint = run_dir.path().join("checkpoint_final.ckpt");
    let mut args = vec![
        "eval",
        "--data",
        data.path().to_str().unwrap(),
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--out",
        eval_dir.path().to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert!(out.status.success(), "eval failed: {}", stderr(&out));
    assert!(stdout(&out).contains("top-1 accuracy"), "{}", stdout(&out));

    let confusion = fs::read_to_string(eval_dir.path().join("confusion.csv")).unwrap();
    let header = confusion.lines().next().unwrap();
    assert_eq!(header, "true_class,pred_0,pred_1,pred_2,pred_3");
    assert_eq!(confusion.lines().count(), 5, "header plus one row per class");

    // The shuffle flag must be reflected in the report line.
    args.push("--shuffle");
    let out = run(&args);
    assert!(out.status.success(), "shuffled eval failed: {}", stderr(&out));
    assert!(stdout(&out).contains("with shuffled frames"), "{}", stdout(&out));
}

#[test]
fn explain_writes_one_saliency_map_per_branch() {
    let data = TempDir::new().unwrap();
    let run_dir = TempDir::new().unwrap();
    let maps_dir = TempDir::new().unwrap();
    generate_tiny(data.path());
    train_tiny(data.path(), run_dir.path());

    let checkpoint = run_dir.path().join("checkpoint_final.ckpt");
    let mut args = vec![
        "explain",
        "--data",
        data.path().to_str().unwrap(),
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--video",
        "0",
        "--class",
        "0",
        "--out",
        maps_dir.path().to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert!(out.status.success(), "explain failed: {}", stderr(&out));
    for branch in 0..3 {
        let path = maps_dir.path().join(format!("video0_class0_branch{branch}.pgm"));
        let bytes = fs::read(&path).unwrap_or_else(|_| panic!("{} missing", path.display()));
        assert!(bytes.starts_with(b"P5\n"), "not a binary PGM");
    }
}

#[test]
fn unknown_config_key_fails_with_usage_exit_code() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "generate",
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "no_such_knob=1",
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("no_such_knob"), "{}", stderr(&out));
}

#[test]
fn missing_dataset_fails_with_io_exit_code() {
    let out_dir = TempDir::new().unwrap();
    let out = run(&[
        "train",
        "--data",
        "/nonexistent/dataset",
        "--out",
        out_dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("error:"), "{}", stderr(&out));
}

#[test]
fn checkpoint_architecture_mismatch_names_the_parameter() {
    let data = TempDir::new().unwrap();
    let run_dir = TempDir::new().unwrap();
    generate_tiny(data.path());
    train_tiny(data.path(), run_dir.path());

    let checkpoint = run_dir.path().join("checkpoint_final.ckpt");
    // Same dataset, but the model is declared with twice the hidden width.
    let mut args = vec![
        "eval",
        "--data",
        data.path().to_str().unwrap(),
        "--checkpoint",
        checkpoint.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--set", "hidden_width=16"]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("lstm."), "should name the first mismatched parameter: {err}");
    assert!(err.contains("shape"), "{err}");
}
