//! `asm eval`: metrics for a checkpoint over a manifest, with an optional
//! per-clip logit dump.

use std::path::Path;

use asm_core::checkpoint::load_checkpoint;
use asm_core::manifest::{load_features, Manifest};
use asm_core::metrics::{accuracy, auc_macro, softmax_rows};
use asm_core::train::predict_all;

use crate::CliError;

pub fn run(
    checkpoint: &Path,
    manifest: &Path,
    dump_logits: Option<&Path>,
    cache: bool,
    jobs: usize,
) -> Result<(), CliError> {
    let ckpt = load_checkpoint(checkpoint)
        .map_err(|e| CliError::Usage(format!("checkpoint {}: {e}", checkpoint.display())))?;
    let manifest = Manifest::load(manifest).map_err(|e| CliError::Usage(e.to_string()))?;
    let model = ckpt.to_model().map_err(|e| CliError::Usage(e.to_string()))?;

    let set = load_features(&manifest, &ckpt.frontend, &ckpt.mixer, cache, jobs)
        .map_err(|e| CliError::Runtime(e.into()))?;
    let logits = predict_all(&model, &set).map_err(|e| CliError::Runtime(e.into()))?;
    let acc = accuracy(&logits, &set.labels).map_err(|e| CliError::Runtime(e.into()))?;
    let probs = softmax_rows(&logits).map_err(|e| CliError::Runtime(e.into()))?;
    let auc = auc_macro(&probs, &set.labels).map_err(|e| CliError::Runtime(e.into()))?;
    if !auc.skipped_classes.is_empty() {
        eprintln!("note: classes without both positives and negatives skipped in AUC: {:?}", auc.skipped_classes);
    }

    if let Some(path) = dump_logits {
        let c = ckpt.mixer.num_classes;
        let mut text = String::from("path,label");
        for j in 0..c {
            text.push_str(&format!(",logit_{j}"));
        }
        text.push('\n');
        for i in 0..set.len() {
            text.push_str(&format!("{},{}", set.paths[i].display(), set.labels[i]));
            for j in 0..c {
                text.push_str(&format!(",{}", logits.data()[i * c + j]));
            }
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| CliError::Runtime(e.into()))?;
    }

    println!("acc={acc:.4} auc={:.4}", auc.auc);
    Ok(())
}
