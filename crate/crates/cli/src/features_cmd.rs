//! `asm features`: materialize the on-disk feature cache for every manifest
//! named in a config.

use asm_core::manifest::{raw_features, Manifest};

use crate::config::RunConfig;
use crate::CliError;

pub fn run(cfg: RunConfig, jobs: usize) -> Result<(), CliError> {
    cfg.frontend.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let manifests = [
        ("train", &cfg.data.train_manifest),
        ("val", &cfg.data.val_manifest),
        ("test", &cfg.data.test_manifest),
    ];
    let mut any = false;
    for (which, path) in manifests {
        let Some(path) = path else { continue };
        any = true;
        let manifest = Manifest::load(path)
            .map_err(|e| CliError::Usage(format!("data.{which}_manifest: {e}")))?;
        let rows = &manifest.rows;
        let jobs = jobs.max(1);
        let chunk = rows.len().div_ceil(jobs);
        let frontend = &cfg.frontend;
        let results: Vec<Result<(), asm_core::Error>> = std::thread::scope(|scope| {
            let handles: Vec<_> = rows
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        for row in part {
                            raw_features(row, frontend, true)?;
                        }
                        Ok(())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for r in results {
            r.map_err(|e| CliError::Runtime(e.into()))?;
        }
        println!("cached {} clips for data.{which}_manifest", manifest.len());
    }
    if !any {
        return Err(CliError::Usage("config names no manifests to cache".into()));
    }
    Ok(())
}
