//! Black-box tests of the command-line binary: artifact layout, dataset
//! generation, and the exit-code contract (0 ok, 2 configuration,
//! 3 malformed data, 4 training failure).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use prunesense_cli::data::load_mnist_raw;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prunesense"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should launch")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("binary should exit normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(path: &Path, data_dir: &Path, train_epochs: usize, lr: f32) {
    let text = format!(
        r#"model = "conv4-mini"
master_seed = 11

[dataset]
kind = "mnist"
dir = "{data}"

[train]
epochs = {train_epochs}
batch_size = 32
schedule = [[0, {lr}]]
momentum = 0.9

[hierarchy]
samples = 2
rounds = 1
retrain_epochs = 1
retrain_lr = 0.02

[planner]
threshold_frac = 0.2

[planner.prune]
initial_ratio = 0.1
ratio_step = 0.05
target_overall = 0.15
selection = "l1_norm"
retrain_epochs = 1
retrain_lr = 0.02
batch_size = 32
momentum = 0.9
"#,
        data = data_dir.display(),
    );
    fs::write(path, text).unwrap();
}

fn gen_data(dir: &Path, train: usize, test: usize, seed: u64) {
    let out = run(&[
        "gen-data",
        "--out",
        dir.to_str().unwrap(),
        "--train",
        &train.to_string(),
        "--test",
        &test.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn gen_data_writes_balanced_loadable_idx_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    gen_data(&dir, 60, 30, 7);

    let (train, test) = load_mnist_raw(&dir).unwrap();
    assert_eq!((train.n, train.c, train.h, train.w), (60, 1, 28, 28));
    assert_eq!((test.n, test.c, test.h, test.w), (30, 1, 28, 28));
    let mut counts = [0usize; 10];
    for &l in &train.labels {
        counts[l as usize] += 1;
    }
    assert_eq!(counts, [6; 10], "labels should be balanced");

    // Same seed, same bytes; different seed, different bytes.
    let again = tmp.path().join("again");
    gen_data(&again, 60, 30, 7);
    let other = tmp.path().join("other");
    gen_data(&other, 60, 30, 8);
    for name in ["train-images-idx3-ubyte", "train-labels-idx1-ubyte"] {
        let a = fs::read(dir.join(name)).unwrap();
        let b = fs::read(again.join(name)).unwrap();
        assert_eq!(a, b, "{name} should be reproducible");
    }
    assert_ne!(
        fs::read(dir.join("train-images-idx3-ubyte")).unwrap(),
        fs::read(other.join("train-images-idx3-ubyte")).unwrap()
    );
}

#[test]
fn missing_and_invalid_configs_use_the_config_exit_code() {
    let out = run(&["train", "--config", "/nonexistent/experiment.toml"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "model = \"conv4-mini\"\n").unwrap();
    let out = run(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("configuration error"), "{}", stderr(&out));
}

#[test]
fn truncated_dataset_uses_the_format_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    gen_data(&dir, 30, 10, 7);
    let images = dir.join("train-images-idx3-ubyte");
    let bytes = fs::read(&images).unwrap();
    fs::write(&images, &bytes[..10]).unwrap();

    let cfg = tmp.path().join("exp.toml");
    write_config(&cfg, &dir, 1, 0.05);
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("truncated"), "{}", stderr(&out));
}

#[test]
fn diverging_training_uses_the_training_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    gen_data(&dir, 60, 20, 7);
    let cfg = tmp.path().join("exp.toml");
    write_config(&cfg, &dir, 2, 1.0e15);
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("training"), "{}", stderr(&out));
    // Failed runs still leave a metadata sidecar naming the stage.
    let meta = fs::read_to_string(tmp.path().join("run/meta.json")).unwrap();
    assert!(meta.contains("\"failed\""), "{meta}");
    assert!(meta.contains("base"), "{meta}");
}

#[test]
fn train_artifacts_feed_the_sensitivity_and_group_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    gen_data(&dir, 60, 30, 7);
    let cfg = tmp.path().join("exp.toml");
    write_config(&cfg, &dir, 1, 0.05);

    let train_out = tmp.path().join("train-run");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        train_out.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ckpt = train_out.join("base.ckpt");
    assert!(ckpt.exists());
    assert!(train_out.join("base_metrics.json").exists());

    let sens_out = tmp.path().join("sens-run");
    let out = run(&[
        "sensitivity",
        "--config",
        cfg.to_str().unwrap(),
        "--base-checkpoint",
        ckpt.to_str().unwrap(),
        "--workers",
        "2",
        "--out",
        sens_out.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = sens_out.join("sensitivity.json");
    assert!(report.exists());
    assert!(sens_out.join("record.json").exists());
    assert!(sens_out.join("curves.csv").exists());

    let out = run(&["group", "--report", report.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(text.contains("group 0"), "{text}");
    assert!(text.contains("sensitiveness"), "{text}");
}

#[test]
fn report_on_a_missing_run_uses_the_format_exit_code() {
    let out = run(&["report", "--dir", "/nonexistent/run"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}
