//! Synthetic dataset generator: 1-second sine clips (class k at
//! 300*(k+1) Hz, amplitude 0.5, random phase) plus uniform noise at
//! amplitude 0.05, split 60/20/20 per class.

use std::f64::consts::TAU;
use std::path::Path;

use asm_core::rng::SplitMix64;
use asm_core::wav::write_wav;

use crate::CliError;

const SAMPLE_RATE: u32 = 16000;
const SINE_AMP: f64 = 0.5;
const NOISE_AMP: f64 = 0.05;

pub fn class_frequency(class: usize) -> f64 {
    300.0 * (class + 1) as f64
}

pub fn run(out: &Path, classes: usize, per_class: usize, seed: u64) -> Result<(), CliError> {
    if classes < 2 {
        return Err(CliError::Usage("--classes must be >= 2".into()));
    }
    if per_class < 2 {
        return Err(CliError::Usage("--per-class must be >= 2".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::Usage(format!("--out {}: {e}", out.display())))?;

    let mut rng = SplitMix64::new(seed);
    let mut manifests: [Vec<String>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let n_train = per_class * 6 / 10;
    let n_val = per_class * 2 / 10;

    for class in 0..classes {
        let freq = class_frequency(class);
        for i in 0..per_class {
            let phase = rng.uniform(0.0, TAU);
            let samples: Vec<f32> = (0..SAMPLE_RATE as usize)
                .map(|t| {
                    let s = SINE_AMP * (TAU * freq * t as f64 / SAMPLE_RATE as f64 + phase).sin();
                    (s + rng.uniform(-NOISE_AMP, NOISE_AMP)) as f32
                })
                .collect();
            let name = format!("class{class}_clip{i:03}.wav");
            std::fs::write(out.join(&name), write_wav(&samples, SAMPLE_RATE))
                .map_err(|e| CliError::Runtime(e.into()))?;
            let split = if i < n_train {
                0
            } else if i < n_train + n_val {
                1
            } else {
                2
            };
            manifests[split].push(format!("{name},{class}"));
        }
    }

    for (rows, file) in manifests.iter().zip(["train.csv", "val.csv", "test.csv"]) {
        let mut text = String::from("path,label\n");
        for row in rows {
            text.push_str(row);
            text.push('\n');
        }
        std::fs::write(out.join(file), text).map_err(|e| CliError::Runtime(e.into()))?;
    }
    println!(
        "wrote {} clips ({} classes x {}) and manifests {}/{}/{} to {}",
        classes * per_class,
        classes,
        per_class,
        manifests[0].len(),
        manifests[1].len(),
        manifests[2].len(),
        out.display()
    );
    Ok(())
}
