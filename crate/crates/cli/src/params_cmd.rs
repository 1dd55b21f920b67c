//! `asm params`: exact trainable-parameter count with a per-component
//! breakdown.

use asm_core::mixer::{param_breakdown, param_count};

use crate::config::RunConfig;
use crate::CliError;

pub fn run(cfg: RunConfig) -> Result<(), CliError> {
    cfg.mixer.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let rows = param_breakdown(&cfg.mixer);
    let total = param_count(&cfg.mixer);
    println!("{:<16} {:>12}", "component", "parameters");
    for (name, n) in &rows {
        println!("{name:<16} {n:>12}");
    }
    println!("{:<16} {:>12}", "total", total);
    debug_assert_eq!(rows.iter().map(|(_, n)| n).sum::<u64>(), total);
    Ok(())
}
