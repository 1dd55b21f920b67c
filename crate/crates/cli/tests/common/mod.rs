//! Helpers for driving the `asm` binary from integration tests.

use std::path::Path;
use std::process::{Command, Output};

pub fn asm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_asm"))
}

pub fn run_ok(args: &[&str], cwd: &Path) -> Output {
    let out = asm().args(args).current_dir(cwd).output().expect("spawn asm");
    assert!(
        out.status.success(),
        "asm {:?} failed ({:?}):\nstdout: {}\nstderr: {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Generates the 3x20 synthetic dataset in `dir/data` with the given seed.
pub fn synth(dir: &Path, seed: u64) {
    run_ok(
        &["synth", "--out", "data", "--classes", "3", "--per-class", "20", "--seed", &seed.to_string()],
        dir,
    );
}

/// The tiny overfit config used by the smoke runs: dim 32, depth 2,
/// token_hidden 16, channel_hidden 64, 20 epochs.
pub fn smoke_config(activation: &str, epochs: usize) -> String {
    format!(
        r#"{{
  "mixer": {{
    "dim": 32, "depth": 2, "token_hidden": 16, "channel_hidden": 64,
    "activation": "{activation}", "num_classes": 3, "input_shape": [128, 128]
  }},
  "train": {{ "lr0": 0.001, "epochs": {epochs}, "batch_size": 16, "seed": 1 }},
  "data": {{
    "train_manifest": "data/train.csv",
    "val_manifest": "data/val.csv",
    "test_manifest": "data/test.csv"
  }},
  "out_dir": "run"
}}"#
    )
}

/// Parses `acc=<v> auc=<v>` from `asm eval` stdout.
pub fn parse_eval(stdout: &str) -> (f64, f64) {
    let line = stdout.lines().find(|l| l.starts_with("acc=")).expect("eval line");
    let mut parts = line.split_whitespace();
    let acc = parts.next().unwrap().strip_prefix("acc=").unwrap().parse().unwrap();
    let auc = parts.next().unwrap().strip_prefix("auc=").unwrap().parse().unwrap();
    (acc, auc)
}

/// epochs.csv without its wall-time column (the only non-replayable field).
pub fn epochs_csv_deterministic(path: &Path) -> String {
    let text = std::fs::read_to_string(path).expect("epochs.csv");
    text.lines()
        .map(|line| {
            let (head, _seconds) = line.rsplit_once(',').expect("csv row");
            head.to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}
