//! Dataset manifests (`path,label` CSV) and the clip -> feature pipeline,
//! including the optional on-disk feature cache.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::frontend::{
    decode_feature_cache, encode_feature_cache, log_mel, normalize, pad_or_truncate,
    resample_linear, FeatureStats, FrontendConfig, MelSpectrogram, StatsAccumulator,
};
use crate::mixer::{patchify_spec, MixerConfig};
use crate::wav::load_wav;
use crate::Tensor32;

/// One dataset entry. `path` has been resolved against the manifest's
/// directory.
#[derive(Debug, Clone)]
pub struct ManifestRow {
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    pub dir: PathBuf,
}

impl Manifest {
    /// Parses a `path,label` CSV. Relative paths resolve against the
    /// manifest's directory.
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("manifest {}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut lines = text.lines();
        match lines.next() {
            Some("path,label") => {}
            Some(other) => {
                return Err(Error::Parse(format!(
                    "manifest header: expected 'path,label', got '{other}'"
                )))
            }
            None => return Err(Error::Parse("manifest is empty".into())),
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (p, l) = line.split_once(',').ok_or_else(|| {
                Error::Parse(format!("manifest line {}: missing comma", lineno + 2))
            })?;
            let label: usize = l.trim().parse().map_err(|_| {
                Error::Parse(format!("manifest line {}: label '{l}' is not an integer", lineno + 2))
            })?;
            let rel = PathBuf::from(p.trim());
            let path = if rel.is_absolute() { rel } else { dir.join(rel) };
            rows.push(ManifestRow { path, label });
        }
        if rows.is_empty() {
            return Err(Error::Input("manifest has no rows".into()));
        }
        Ok(Manifest { rows, dir })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn max_label(&self) -> usize {
        self.rows.iter().map(|r| r.label).max().unwrap_or(0)
    }
}

/// Cache file that sits next to a clip.
pub fn cache_path(clip: &Path) -> PathBuf {
    let mut os = clip.as_os_str().to_os_string();
    os.push(".asmf");
    PathBuf::from(os)
}

/// Raw (un-padded, un-normalized) log-mel features for one clip. With
/// `cache` set, a valid sibling `.asmf` file short-circuits extraction and a
/// fresh extraction is written back.
pub fn raw_features(row: &ManifestRow, cfg: &FrontendConfig, cache: bool) -> Result<MelSpectrogram> {
    if cache {
        let cp = cache_path(&row.path);
        if let Ok(bytes) = std::fs::read(&cp) {
            if let Ok(spec) = decode_feature_cache(&bytes, cfg.frame_hop_secs()) {
                return Ok(spec);
            }
        }
    }
    let bytes = std::fs::read(&row.path)
        .map_err(|e| Error::Input(format!("clip {}: {e}", row.path.display())))?;
    let clip = load_wav(&bytes)?;
    let clip =
        if clip.sample_rate == cfg.sample_rate { clip } else { resample_linear(&clip, cfg.sample_rate)? };
    let spec = log_mel(&clip, cfg)?;
    if cache {
        std::fs::write(cache_path(&row.path), encode_feature_cache(&spec))?;
    }
    Ok(spec)
}

/// Runs `f` over the rows, optionally fanning out over `jobs` threads.
/// Output order matches row order either way.
fn map_rows<F, R>(rows: &[ManifestRow], jobs: usize, f: F) -> Result<Vec<R>>
where
    F: Fn(&ManifestRow) -> Result<R> + Sync,
    R: Send,
{
    if jobs <= 1 || rows.len() <= 1 {
        return rows.iter().map(&f).collect();
    }
    let chunk = rows.len().div_ceil(jobs);
    let mut out: Vec<Option<Result<R>>> = Vec::new();
    out.resize_with(rows.len(), || None);
    std::thread::scope(|scope| {
        for (slot_chunk, row_chunk) in out.chunks_mut(chunk).zip(rows.chunks(chunk)) {
            let f = &f;
            scope.spawn(move || {
                for (slot, row) in slot_chunk.iter_mut().zip(row_chunk) {
                    *slot = Some(f(row));
                }
            });
        }
    });
    out.into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Streams per-cell statistics over every un-normalized spectrogram.
pub fn dataset_stats(
    manifest: &Manifest,
    cfg: &FrontendConfig,
    cache: bool,
    jobs: usize,
) -> Result<FeatureStats> {
    if manifest.is_empty() {
        return Err(Error::Input("empty manifest".into()));
    }
    let specs = map_rows(&manifest.rows, jobs, |row| raw_features(row, cfg, cache))?;
    let mut acc = StatsAccumulator::new();
    for spec in &specs {
        acc.push(spec);
    }
    acc.finalize()
}

/// An in-memory dataset: patchified, normalized feature tensors plus labels.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub patches: Vec<Tensor32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub paths: Vec<PathBuf>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Full pipeline for a manifest: extract (or read cached) log-mel features,
/// pad/truncate to the configured frame count, normalize with the resolved
/// dataset statistics, patchify. Fails up front if a label is out of range
/// or normalization statistics are missing.
pub fn load_features(
    manifest: &Manifest,
    frontend: &FrontendConfig,
    mixer: &MixerConfig,
    cache: bool,
    jobs: usize,
) -> Result<FeatureSet> {
    let (mean, std) = match (frontend.mean, frontend.std) {
        (Some(m), Some(s)) => (m, s),
        _ => {
            return Err(Error::Input(
                "frontend.mean/frontend.std unresolved; compute dataset statistics first".into(),
            ))
        }
    };
    if mixer.input_shape != (frontend.target_frames, crate::frontend::N_MELS) {
        return Err(Error::Input(format!(
            "mixer.input_shape {:?} != (frontend.target_frames, 128) = ({}, {})",
            mixer.input_shape,
            frontend.target_frames,
            crate::frontend::N_MELS
        )));
    }
    if let Some(bad) = manifest.rows.iter().find(|r| r.label >= mixer.num_classes) {
        return Err(Error::Input(format!(
            "label {} in {} exceeds num_classes {}",
            bad.label,
            bad.path.display(),
            mixer.num_classes
        )));
    }
    let patches = map_rows(&manifest.rows, jobs, |row| {
        let spec = raw_features(row, frontend, cache)?;
        let spec = pad_or_truncate(&spec, frontend.target_frames, frontend.floor);
        let spec = normalize(&spec, mean, std)?;
        patchify_spec::<f32>(&spec, mixer)
    })?;
    Ok(FeatureSet {
        patches,
        labels: manifest.rows.iter().map(|r| r.label).collect(),
        num_classes: mixer.num_classes,
        paths: manifest.rows.iter().map(|r| r.path.clone()).collect(),
    })
}
