//! Run configuration: one JSON document covering the frontend, model,
//! optimizer, dataset paths, and output directory. Every hyperparameter has
//! a default, so a minimal config only names its data and output paths.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use asm_core::frontend::FrontendConfig;
use asm_core::manifest::{dataset_stats, Manifest};
use asm_core::mixer::MixerConfig;
use asm_core::train::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(default)]
    pub train_manifest: Option<PathBuf>,
    #[serde(default)]
    pub val_manifest: Option<PathBuf>,
    #[serde(default)]
    pub test_manifest: Option<PathBuf>,
    #[serde(default)]
    pub cache: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub frontend: FrontendConfig,
    #[serde(default)]
    pub mixer: MixerConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// When set (>= 2 entries), training runs once per seed and summarizes.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Field-level validation of the numeric sections.
    pub fn validate_sections(&self) -> Result<(), CliError> {
        self.frontend.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.mixer.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }
}

fn require_manifest(
    which: &str,
    path: &Option<PathBuf>,
    classes: usize,
) -> Result<(PathBuf, Manifest), CliError> {
    let path = path
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("data.{which}_manifest is required")))?;
    let manifest = Manifest::load(path)
        .map_err(|e| CliError::Usage(format!("data.{which}_manifest: {e}")))?;
    if manifest.max_label() >= classes {
        return Err(CliError::Usage(format!(
            "data.{which}_manifest: label {} exceeds mixer.num_classes {}",
            manifest.max_label(),
            classes
        )));
    }
    let abs = path
        .canonicalize()
        .map_err(|e| CliError::Usage(format!("data.{which}_manifest {}: {e}", path.display())))?;
    Ok((abs, manifest))
}

/// Everything a training run needs, validated and with normalization
/// statistics resolved. `config` is the exact document written to run.json;
/// feeding it back reproduces the run.
pub struct ResolvedRun {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub train_manifest: Manifest,
    pub val_manifest: Manifest,
    pub test_manifest: Option<Manifest>,
}

/// Validates a training config and resolves dataset statistics (computed
/// over the training split when not pinned in the config). No files are
/// written here.
pub fn resolve_train(mut cfg: RunConfig, jobs: usize) -> Result<ResolvedRun, CliError> {
    cfg.validate_sections()?;
    if cfg.mixer.input_shape != (cfg.frontend.target_frames, asm_core::frontend::N_MELS) {
        return Err(CliError::Usage(format!(
            "mixer.input_shape {:?} must equal (frontend.target_frames, 128) = ({}, 128)",
            cfg.mixer.input_shape, cfg.frontend.target_frames
        )));
    }
    if let Some(seeds) = &cfg.seeds {
        if seeds.len() < 2 {
            return Err(CliError::Usage(
                "seeds: need at least 2 seeds for a defined standard deviation".into(),
            ));
        }
    }
    let out_dir = cfg
        .out_dir
        .clone()
        .ok_or_else(|| CliError::Usage("out_dir is required for training".into()))?;

    let (train_path, train_manifest) =
        require_manifest("train", &cfg.data.train_manifest, cfg.mixer.num_classes)?;
    let (val_path, val_manifest) =
        require_manifest("val", &cfg.data.val_manifest, cfg.mixer.num_classes)?;
    let test = match &cfg.data.test_manifest {
        Some(_) => {
            let (p, m) = require_manifest("test", &cfg.data.test_manifest, cfg.mixer.num_classes)?;
            cfg.data.test_manifest = Some(p);
            Some(m)
        }
        None => None,
    };
    cfg.data.train_manifest = Some(train_path);
    cfg.data.val_manifest = Some(val_path);

    if cfg.frontend.mean.is_none() || cfg.frontend.std.is_none() {
        let stats = dataset_stats(&train_manifest, &cfg.frontend, cfg.data.cache, jobs)
            .map_err(|e| CliError::Runtime(e.into()))?;
        if stats.degenerate {
            eprintln!(
                "warning: degenerate feature statistics (std = 0) over the training split; \
                 normalization will fail"
            );
        }
        cfg.frontend.mean = Some(stats.mean);
        cfg.frontend.std = Some(stats.std);
    }

    Ok(ResolvedRun { config: cfg, out_dir, train_manifest, val_manifest, test_manifest: test })
}
