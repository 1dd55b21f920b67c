//! End-to-end behavior of the `asm` binary: exit codes, run artifacts, the
//! run.json reproduce contract, conversion, and the feature cache.

mod common;

use common::*;

use asm_core::checkpoint::{
    encode_checkpoint, load_checkpoint, CheckpointKind, RgbProjectionWeights,
};
use asm_core::frontend::FrontendConfig;
use asm_core::mixer::MixerConfig;
use asm_core::rng::SplitMix64;
use asm_core::tensor::Tensor;

#[test]
fn synth_is_deterministic_and_split_correctly() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("a")).unwrap();
    std::fs::create_dir(dir.path().join("b")).unwrap();
    synth(&dir.path().join("a"), 9);
    synth(&dir.path().join("b"), 9);
    let clip = "data/class2_clip013.wav";
    let x = std::fs::read(dir.path().join("a").join(clip)).unwrap();
    let y = std::fs::read(dir.path().join("b").join(clip)).unwrap();
    assert_eq!(x, y, "same seed must give bit-identical wav bytes");

    let train = std::fs::read_to_string(dir.path().join("a/data/train.csv")).unwrap();
    assert_eq!(train.lines().count(), 1 + 36);
    let val = std::fs::read_to_string(dir.path().join("a/data/val.csv")).unwrap();
    assert_eq!(val.lines().count(), 1 + 12);
}

#[test]
fn synth_rejects_degenerate_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = asm()
        .args(["synth", "--out", "x", "--classes", "1", "--per-class", "5"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_run_artifacts_and_reproduces_from_run_json() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 1);
    std::fs::write(dir.path().join("cfg.json"), smoke_config("gelu", 4)).unwrap();
    run_ok(&["train", "--config", "cfg.json"], dir.path());

    for f in ["run/run.json", "run/epochs.csv", "run/best.asmc"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let epochs = std::fs::read_to_string(dir.path().join("run/epochs.csv")).unwrap();
    assert_eq!(epochs.lines().next().unwrap(), "epoch,lr,train_loss,val_acc,val_auc,seconds");
    assert_eq!(epochs.lines().count(), 1 + 4);

    // re-invoking with run.json reproduces the run (all replayable columns)
    run_ok(&["train", "--config", "run/run.json", "--out", "rerun"], dir.path());
    assert_eq!(
        epochs_csv_deterministic(&dir.path().join("run/epochs.csv")),
        epochs_csv_deterministic(&dir.path().join("rerun/epochs.csv"))
    );
    assert_eq!(
        std::fs::read(dir.path().join("run/best.asmc")).unwrap(),
        std::fs::read(dir.path().join("rerun/best.asmc")).unwrap()
    );
}

#[test]
fn train_config_validation_exits_2_before_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 1);
    let bad = smoke_config("gelu", 4).replace("\"dim\": 32", "\"dim\": 0");
    std::fs::write(dir.path().join("bad.json"), bad).unwrap();
    let out = asm()
        .args(["train", "--config", "bad.json"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("mixer.dim"), "field not named: {msg}");
    assert!(!dir.path().join("run").exists(), "failed validation must not create the run dir");
}

#[test]
fn train_rejects_single_seed_list() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 1);
    std::fs::write(dir.path().join("cfg.json"), smoke_config("gelu", 2)).unwrap();
    let out = asm()
        .args(["train", "--config", "cfg.json", "--seeds", "7"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_logit_dump_matches_printed_metrics() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 2);
    std::fs::write(dir.path().join("cfg.json"), smoke_config("gelu", 6)).unwrap();
    run_ok(&["train", "--config", "cfg.json"], dir.path());
    let out = run_ok(
        &["eval", "--checkpoint", "run/best.asmc", "--manifest", "data/test.csv", "--dump-logits", "dump.csv"],
        dir.path(),
    );
    let (acc, auc) = parse_eval(&stdout_of(&out));

    // recompute both metrics from the dump
    let text = std::fs::read_to_string(dir.path().join("dump.csv")).unwrap();
    let mut labels = Vec::new();
    let mut logits = Vec::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        labels.push(fields[1].parse::<usize>().unwrap());
        for v in &fields[2..] {
            logits.push(v.parse::<f64>().unwrap());
        }
    }
    assert_eq!(labels.len(), 12, "dump row count == manifest row count");
    let t = Tensor::new(vec![labels.len(), 3], logits).unwrap();
    let acc2 = asm_core::metrics::accuracy(&t, &labels).unwrap();
    let probs = asm_core::metrics::softmax_rows(&t).unwrap();
    let auc2 = asm_core::metrics::auc_macro(&probs, &labels).unwrap().auc;
    assert_eq!(format!("{acc:.4}"), format!("{acc2:.4}"));
    assert_eq!(format!("{auc:.4}"), format!("{auc2:.4}"));
}

#[test]
fn eval_bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 3);
    std::fs::write(dir.path().join("cfg.json"), smoke_config("gelu", 2)).unwrap();
    run_ok(&["train", "--config", "cfg.json"], dir.path());

    // truncated checkpoint fails cleanly at load
    let bytes = std::fs::read(dir.path().join("run/best.asmc")).unwrap();
    std::fs::write(dir.path().join("broken.asmc"), &bytes[..bytes.len() / 2]).unwrap();
    let out = asm()
        .args(["eval", "--checkpoint", "broken.asmc", "--manifest", "data/test.csv"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // manifest whose labels exceed the checkpoint's class count
    std::fs::write(dir.path().join("wide.csv"), "path,label\ndata/class0_clip000.wav,9\n").unwrap();
    let out = asm()
        .args(["eval", "--checkpoint", "run/best.asmc", "--manifest", "wide.csv"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

fn write_rgb_fixture(dir: &std::path::Path, equal_channels: bool) -> (MixerConfig, std::path::PathBuf) {
    let mixer = MixerConfig {
        dim: 32,
        depth: 2,
        token_hidden: 16,
        channel_hidden: 64,
        num_classes: 3,
        ..MixerConfig::default()
    };
    let pp = mixer.patch_len();
    let mut rng = SplitMix64::new(77);
    let one: Vec<f32> = (0..pp * mixer.dim).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
    let weight = if equal_channels {
        let mut w = one.clone();
        w.extend_from_slice(&one);
        w.extend_from_slice(&one);
        w
    } else {
        (0..3 * pp * mixer.dim).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()
    };
    let bias: Vec<f32> = (0..mixer.dim).map(|_| rng.uniform(-0.1, 0.1) as f32).collect();
    let rgb = RgbProjectionWeights::new(
        Tensor::new(vec![3 * pp, mixer.dim], weight).unwrap(),
        Tensor::vector(bias).unwrap(),
        mixer.patch,
    )
    .unwrap();
    let ckpt = rgb.into_checkpoint(FrontendConfig::default(), mixer);
    let path = dir.join("rgb.asmc");
    std::fs::write(&path, encode_checkpoint(&ckpt)).unwrap();
    (mixer, path)
}

#[test]
fn convert_luma_produces_loadable_forwardable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (mixer, src) = write_rgb_fixture(dir.path(), false);
    let out = run_ok(
        &["convert", "--source", src.to_str().unwrap(), "--mode", "luma", "--out", "conv.asmc"],
        dir.path(),
    );
    let text = stdout_of(&out);
    assert!(text.contains("R=0.299 G=0.587 B=0.114"), "{text}");
    assert!(text.contains("source digest:"), "{text}");

    let ckpt = load_checkpoint(&dir.path().join("conv.asmc")).unwrap();
    assert_eq!(ckpt.kind, CheckpointKind::Model);
    assert!(ckpt.metadata.iter().any(|(k, v)| k == "convert.mode" && v == "luma"));
    let model = ckpt.to_model().unwrap();
    let grid = Tensor::<f32>::zeros(vec![mixer.input_shape.0, mixer.input_shape.1]);
    let logits = model.forward(&grid).unwrap();
    assert!(logits.data().iter().all(|v| v.is_finite()));
}

#[test]
fn convert_equal_channels_luma_equals_source_channel() {
    let dir = tempfile::tempdir().unwrap();
    let (mixer, src) = write_rgb_fixture(dir.path(), true);
    run_ok(
        &["convert", "--source", src.to_str().unwrap(), "--mode", "luma", "--out", "conv.asmc"],
        dir.path(),
    );
    let src_ckpt = load_checkpoint(&src).unwrap();
    let conv = load_checkpoint(&dir.path().join("conv.asmc")).unwrap();
    let pp = mixer.patch_len();
    let src_w = src_ckpt.tensor("patch_embed.weight").unwrap();
    let conv_w = conv.tensor("patch_embed.weight").unwrap();
    assert_eq!(conv_w.shape(), &[pp, mixer.dim]);
    for i in 0..pp * mixer.dim {
        assert_eq!(conv_w.data()[i].to_bits(), src_w.data()[i].to_bits());
    }
}

#[test]
fn convert_rejects_model_checkpoint_as_source() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 4);
    std::fs::write(dir.path().join("cfg.json"), smoke_config("gelu", 2)).unwrap();
    run_ok(&["train", "--config", "cfg.json"], dir.path());
    let out = asm()
        .args(["convert", "--source", "run/best.asmc", "--mode", "luma", "--out", "x.asmc"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_clips_energize_the_expected_mel_bin() {
    // independent filterbank oracle: build the triangles from the formula,
    // apply them to the naive-DFT power of a windowed pure sine at the class
    // frequency, and demand the generated clip's log-mel argmax agrees
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 6);

    let hz_to_mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let mel_to_hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let (sr, n_fft, win) = (16000f64, 512usize, 400usize);
    let n_bins = n_fft / 2 + 1;
    let mel_max = hz_to_mel(sr / 2.0);
    let points: Vec<f64> = (0..130).map(|j| mel_to_hz(mel_max * j as f64 / 129.0)).collect();
    let weight = |k: usize, f: f64| -> f64 {
        let (lo, ctr, hi) = (points[k], points[k + 1], points[k + 2]);
        ((f - lo) / (ctr - lo)).min((hi - f) / (hi - ctr)).max(0.0)
    };

    for class in 0..3usize {
        let freq = 300.0 * (class + 1) as f64;
        // naive DFT power of one Hann-windowed steady frame
        let frame: Vec<f64> = (0..win)
            .map(|n| {
                let w = 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / win as f64).cos();
                w * 0.5 * (std::f64::consts::TAU * freq * n as f64 / sr).sin()
            })
            .collect();
        let mut power = vec![0f64; n_bins];
        for (k, p) in power.iter_mut().enumerate() {
            let (mut re, mut im) = (0f64, 0f64);
            for (n, &x) in frame.iter().enumerate() {
                let ang = -std::f64::consts::TAU * (k * n) as f64 / n_fft as f64;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            *p = re * re + im * im;
        }
        let expected = (0..128)
            .map(|k| (0..n_bins).map(|b| weight(k, b as f64 * sr / n_fft as f64) * power[b]).sum::<f64>())
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0;

        // actual spectrogram of the generated clip (with noise and phase)
        let bytes = std::fs::read(dir.path().join(format!("data/class{class}_clip000.wav"))).unwrap();
        let clip = asm_core::wav::load_wav(&bytes).unwrap();
        let spec = asm_core::frontend::log_mel(&clip, &FrontendConfig::default()).unwrap();
        let mut hits = 0usize;
        for t in 0..spec.frames() {
            let row = spec.row(t);
            let argmax = row.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            if argmax == expected {
                hits += 1;
            }
        }
        assert!(
            hits * 10 >= spec.frames() * 9,
            "class {class} ({freq} Hz): argmax hit {hits}/{} frames, oracle bin {expected}",
            spec.frames()
        );
    }
}

#[test]
fn multi_seed_summary_matches_recomputation_from_rows() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 7);
    std::fs::write(dir.path().join("cfg.json"), smoke_config("gelu", 3)).unwrap();
    run_ok(&["train", "--config", "cfg.json", "--seeds", "11,12,13", "--out", "multi"], dir.path());
    let text = std::fs::read_to_string(dir.path().join("multi/summary.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 1 + 3 + 1);

    // recompute each mean±sd column from the per-seed rows
    for col in 2..6 {
        let vals: Vec<f64> = rows[1..4]
            .iter()
            .map(|r| r.split(',').nth(col).unwrap().parse::<f64>().unwrap())
            .collect();
        let (m, s) = asm_core::train::mean_sd(&vals);
        let want = asm_core::train::format_mean_sd(m, s);
        let got = rows[4].split(',').nth(col).unwrap();
        assert_eq!(got, want, "column {col}");
    }
}

#[test]
fn features_cache_accelerates_and_preserves_results() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 5);
    std::fs::write(dir.path().join("cfg.json"), smoke_config("gelu", 3)).unwrap();
    run_ok(&["features", "--config", "cfg.json", "--jobs", "4"], dir.path());
    assert!(dir.path().join("data/class0_clip000.wav.asmf").exists());

    run_ok(&["train", "--config", "cfg.json", "--cache", "--out", "cached"], dir.path());
    run_ok(&["train", "--config", "cfg.json", "--out", "plain"], dir.path());
    assert_eq!(
        epochs_csv_deterministic(&dir.path().join("cached/epochs.csv")),
        epochs_csv_deterministic(&dir.path().join("plain/epochs.csv")),
        "cached features must not change results"
    );
}
