use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn m2s(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_m2s"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn loss_rows(text: &str) -> usize {
    text.lines()
        .filter(|l| l.split_whitespace().count() == 7)
        .filter(|l| l.trim_start().starts_with(char::is_numeric))
        .count()
}

fn synthetic(dir: &Path, seed: &str) {
    let out = m2s(&[
        "make-synthetic",
        "--seed",
        seed,
        "--scans",
        "6",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn help_everywhere() {
    let out = m2s(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    for sub in [
        "inspect",
        "gen-instances",
        "fuse",
        "build-augdb",
        "loss-check",
        "train-toy",
        "eval-miou",
        "make-synthetic",
    ] {
        let out = m2s(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(stdout(&out).contains("Usage"), "{sub}");
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(m2s(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(m2s(&[]).status.code(), Some(1));
    assert_eq!(m2s(&["fuse", "--scan", "x"]).status.code(), Some(1));
    let out = m2s(&["loss-check", "--cases", "-3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
}

#[test]
fn synthetic_then_fuse() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("d");
    synthetic(&seq, "1");
    let out = m2s(&[
        "fuse",
        "--seq",
        seq.to_str().unwrap(),
        "--scan",
        "4",
        "--window",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stem = seq.join("fused").join("000004");
    let bin = fs::read(stem.with_extension("bin")).unwrap();
    let label = fs::read(stem.with_extension("label")).unwrap();
    let origin = fs::read_to_string(stem.with_extension("origin")).unwrap();
    assert_eq!(bin.len() / 16, label.len() / 4);
    let appended = origin.lines().count();
    assert!(appended > 0);
    assert!(origin
        .lines()
        .all(|l| (-4..=-1).contains(&l.parse::<i32>().unwrap())));
    assert!(stdout(&out).contains(&format!("appended points: {appended}")));

    let out = m2s(&["inspect", stem.with_extension("bin").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains(&format!("points: {}", bin.len() / 16)));
    assert!(stdout(&out).contains("bbox min"));
}

#[test]
fn fuse_without_labels_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("d");
    synthetic(&seq, "2");
    fs::remove_dir_all(seq.join("labels")).unwrap();
    let out = m2s(&["fuse", "--seq", seq.to_str().unwrap(), "--scan", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing labels"), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
}

#[test]
fn missing_inputs_are_data_errors() {
    let out = m2s(&["inspect", "/nonexistent/000000.bin"]);
    assert_eq!(out.status.code(), Some(2));
    let out = m2s(&["fuse", "--seq", "/nonexistent", "--scan", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("x.bin");
    fs::write(&bad, [0u8; 17]).unwrap();
    assert_eq!(
        m2s(&["inspect", bad.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn seeded_commands_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    synthetic(&a, "9");
    synthetic(&b, "9");
    for f in [
        "velodyne/000003.bin",
        "labels/000003.label",
        "poses.txt",
        "calib.txt",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let args = ["train-toy", "--seed", "5", "--steps", "20", "--lr", "0.1"];
    let first = m2s(&args);
    let second = m2s(&args);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert_eq!(first.stdout, second.stdout);
    let text = stdout(&first);
    assert_eq!(loss_rows(&text), 20);
    assert!(text.contains("mIoU"));
    let other = m2s(&["train-toy", "--seed", "6", "--steps", "20", "--lr", "0.1"]);
    assert_ne!(first.stdout, other.stdout);

    let check = [
        "loss-check",
        "--seed",
        "3",
        "--cases",
        "5",
        "--property-cases",
        "20",
    ];
    assert_eq!(m2s(&check).stdout, m2s(&check).stdout);
}

#[test]
fn train_toy_reads_config_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.cfg");
    fs::write(
        &cfg,
        "train.steps = 3\ntrain.lr = 0.05\ndistill.betas = 0.5, 0.01, 0.1, 0.1\n",
    )
    .unwrap();
    let out = m2s(&["train-toy", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = |o: &Output| loss_rows(&stdout(o));
    assert_eq!(rows(&out), 3);
    let out = m2s(&[
        "train-toy",
        "--config",
        cfg.to_str().unwrap(),
        "--steps",
        "5",
    ]);
    assert_eq!(rows(&out), 5);

    fs::write(&cfg, "train.lr = -1\n").unwrap();
    assert_eq!(
        m2s(&["train-toy", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
    fs::write(&cfg, "this line has no equals sign\n").unwrap();
    assert_eq!(
        m2s(&["train-toy", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn gen_instances_and_augdb() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("d");
    synthetic(&seq, "4");
    let out_label = dir.path().join("gen.label");
    let out = m2s(&[
        "gen-instances",
        "--seq",
        seq.to_str().unwrap(),
        "--scan",
        "0",
        "--class",
        "81",
        "--out",
        out_label.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    // the 2.5 m sign pole is taller than the sampling stop distance
    assert!(stdout(&out).contains("instances: 2"), "{}", stdout(&out));
    assert_eq!(
        fs::read(&out_label).unwrap().len(),
        fs::read(seq.join("labels/000000.label")).unwrap().len()
    );

    let db = dir.path().join("db");
    let out = m2s(&[
        "build-augdb",
        "--seq",
        seq.to_str().unwrap(),
        "--out",
        db.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    // bicyclist and traffic sign in each of 6 scans
    assert!(stdout(&out).contains("entries: 12"));
    assert!(db.join("d_000005_00003").join("fused.origin").is_file());
}

#[test]
fn eval_miou_perfect_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("d");
    synthetic(&seq, "3");
    let s = seq.to_str().unwrap();
    let out = m2s(&["eval-miou", "--pred", s, "--gt", s]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let values: Vec<&str> = text.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(values.len(), 20);
    assert_eq!(values.last(), Some(&"100.0"));

    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let out = m2s(&["eval-miou", "--pred", s, "--gt", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn closed_stdout_is_not_a_crash() {
    use std::process::Stdio;
    let mut child = Command::new(env!("CARGO_BIN_EXE_m2s"))
        .args(["train-toy", "--steps", "3000", "--hidden", "2"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    drop(child.stdout.take());
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(!stderr(&out).contains("panicked"));
}
