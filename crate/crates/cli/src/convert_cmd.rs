//! `asm convert`: collapse a 3-channel patch projection to one channel and
//! write a ready-to-train model checkpoint.

use std::path::Path;

use asm_core::checkpoint::{
    digest, load_checkpoint, save_checkpoint, Checkpoint, ConvertMode, import_foreign,
};
use asm_core::rng::SplitMix64;

use crate::CliError;

pub fn run(source: &Path, mode: &str, out: &Path, seed: u64) -> Result<(), CliError> {
    let mode: ConvertMode = mode.parse().map_err(|e: asm_core::Error| CliError::Usage(e.to_string()))?;
    let bytes = std::fs::read(source)
        .map_err(|e| CliError::Usage(format!("source {}: {e}", source.display())))?;
    let src = load_checkpoint(source)
        .map_err(|e| CliError::Usage(format!("source {}: {e}", source.display())))?;

    let mut rng = SplitMix64::new(seed);
    let (model, mut meta) = import_foreign(&src, src.mixer, mode, &mut rng)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    meta.push(("convert.seed".into(), seed.to_string()));
    let ckpt = Checkpoint::from_model(&model, &src.frontend, meta);
    save_checkpoint(&ckpt, out).map_err(|e| CliError::Runtime(e.into()))?;

    let [r, g, b] = mode.coefficients();
    println!("mode={mode} coefficients R={r} G={g} B={b}");
    println!("source digest: {}", digest(&bytes));
    println!("wrote {}", out.display());
    Ok(())
}
