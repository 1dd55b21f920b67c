//! Log-mel spectrogram frontend: 25 ms Hann frames on a 10 ms hop, zero-padded
//! magnitude-squared DFT, and 128 triangular filters on the HTK mel scale.
//!
//! All spectral math runs in f64; cells are stored as f32.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::wav::AudioClip;

/// Mel bin count, fixed by the model architecture.
pub const N_MELS: usize = 128;

// ── Config ───────────────────────────────────────────────────────────

fn d_sample_rate() -> u32 {
    16000
}
fn d_win_len() -> usize {
    400
}
fn d_hop() -> usize {
    160
}
fn d_n_fft() -> usize {
    512
}
fn d_floor() -> f64 {
    1e-10
}
fn d_target_frames() -> usize {
    128
}

/// Feature-extraction settings. Defaults follow the AST lineage: 16 kHz,
/// 25 ms window, 10 ms hop, 512-point FFT, energy floor 1e-10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    #[serde(default = "d_sample_rate")]
    pub sample_rate: u32,
    #[serde(default = "d_win_len")]
    pub win_len: usize,
    #[serde(default = "d_hop")]
    pub hop: usize,
    #[serde(default = "d_n_fft")]
    pub n_fft: usize,
    #[serde(default = "d_floor")]
    pub floor: f64,
    #[serde(default = "d_target_frames")]
    pub target_frames: usize,
    /// Dataset normalization statistics; resolved from the training split
    /// when absent.
    #[serde(default)]
    pub mean: Option<f64>,
    #[serde(default)]
    pub std: Option<f64>,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sample_rate: d_sample_rate(),
            win_len: d_win_len(),
            hop: d_hop(),
            n_fft: d_n_fft(),
            floor: d_floor(),
            target_frames: d_target_frames(),
            mean: None,
            std: None,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Input("frontend.sample_rate must be positive".into()));
        }
        if self.win_len == 0 || self.hop == 0 {
            return Err(Error::Input("frontend.win_len and frontend.hop must be positive".into()));
        }
        if self.n_fft < self.win_len {
            return Err(Error::Input(format!(
                "frontend.n_fft ({}) must be >= frontend.win_len ({})",
                self.n_fft, self.win_len
            )));
        }
        if self.floor <= 0.0 {
            return Err(Error::Input("frontend.floor must be > 0".into()));
        }
        if self.target_frames == 0 {
            return Err(Error::Input("frontend.target_frames must be >= 1".into()));
        }
        if let Some(s) = self.std {
            if s <= 0.0 {
                return Err(Error::Input("frontend.std must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn frame_hop_secs(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }
}

// ── Spectrogram ──────────────────────────────────────────────────────

/// A `frames x 128` grid of log-mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    data: Vec<f32>,
    frames: usize,
    pub frame_hop: f64,
    pub normalized: bool,
}

impl MelSpectrogram {
    pub fn new(data: Vec<f32>, frames: usize, frame_hop: f64, normalized: bool) -> Result<Self> {
        if data.len() != frames * N_MELS {
            return Err(Error::Dimension(format!(
                "spectrogram data length {} != {frames} x {N_MELS}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite spectrogram cell".into()));
        }
        Ok(MelSpectrogram { data, frames, frame_hop, normalized })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * N_MELS..(t + 1) * N_MELS]
    }

    /// Copies the grid into a `[frames, 128]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data: Vec<T> = self.data.iter().map(|&v| T::from_f64(v as f64)).collect();
        Tensor::new(vec![self.frames, N_MELS], data).expect("finite by construction")
    }
}

// ── Resampling ───────────────────────────────────────────────────────

/// Linear interpolation onto a uniform grid at `target_rate`. Duration is
/// preserved to within one sample period.
pub fn resample_linear(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::Input("target rate must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let n = clip.samples.len();
    let out_len = ((n as f64) * target_rate as f64 / clip.sample_rate as f64).round().max(1.0) as usize;
    let step = clip.sample_rate as f64 / target_rate as f64;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let pos = i as f64 * step;
        let i0 = (pos.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        let frac = (pos - i0 as f64) as f32;
        out.push(clip.samples[i0] * (1.0 - frac) + clip.samples[i1] * frac);
    }
    AudioClip::new(out, target_rate)
}

// ── Spectral machinery ───────────────────────────────────────────────

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over DFT power bins.
pub struct MelFilterbank {
    weights: Vec<f64>, // N_MELS x n_bins, row-major
    n_bins: usize,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    /// Builds 128 triangles spanning `[0, sample_rate/2]`. A filter narrower
    /// than the bin spacing would sample to an all-zero row; such rows get
    /// weight 1 at the bin nearest their center so every filter stays live.
    pub fn new(sample_rate: u32, n_fft: usize) -> Self {
        let n_bins = n_fft / 2 + 1;
        let mel_max = hz_to_mel(sample_rate as f64 / 2.0);
        let points: Vec<f64> =
            (0..N_MELS + 2).map(|j| mel_to_hz(mel_max * j as f64 / (N_MELS + 1) as f64)).collect();
        let df = sample_rate as f64 / n_fft as f64;
        let mut weights = vec![0f64; N_MELS * n_bins];
        for k in 0..N_MELS {
            let (lo, ctr, hi) = (points[k], points[k + 1], points[k + 2]);
            let row = &mut weights[k * n_bins..(k + 1) * n_bins];
            for (b, w) in row.iter_mut().enumerate() {
                let f = b as f64 * df;
                let rise = (f - lo) / (ctr - lo);
                let fall = (hi - f) / (hi - ctr);
                *w = rise.min(fall).max(0.0);
            }
            if row.iter().all(|&w| w <= 0.0) {
                let nearest = ((ctr / df).round() as usize).min(n_bins - 1);
                row[nearest] = 1.0;
            }
        }
        MelFilterbank { weights, n_bins, centers_hz: points[1..=N_MELS].to_vec() }
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.weights[k * self.n_bins..(k + 1) * self.n_bins]
    }

    /// Peak frequency of filter `k`.
    pub fn center_hz(&self, k: usize) -> f64 {
        self.centers_hz[k]
    }

    /// Filter energies for one power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        debug_assert_eq!(power.len(), self.n_bins);
        (0..N_MELS)
            .map(|k| self.row(k).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Magnitude-squared DFT of a zero-padded frame, bins `0..=n_fft/2`.
/// Radix-2 when `n_fft` is a power of two, direct evaluation otherwise.
pub fn power_spectrum(frame: &[f64], n_fft: usize) -> Vec<f64> {
    if n_fft.is_power_of_two() {
        let mut re = vec![0f64; n_fft];
        let mut im = vec![0f64; n_fft];
        re[..frame.len()].copy_from_slice(frame);
        fft_in_place(&mut re, &mut im);
        (0..=n_fft / 2).map(|k| re[k] * re[k] + im[k] * im[k]).collect()
    } else {
        naive_power_spectrum(frame, n_fft)
    }
}

/// O(n^2) reference DFT. The radix-2 path is checked against this.
pub fn naive_power_spectrum(frame: &[f64], n_fft: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_fft / 2 + 1);
    for k in 0..=n_fft / 2 {
        let (mut re, mut im) = (0f64, 0f64);
        for (n, &x) in frame.iter().enumerate() {
            let ang = -2.0 * PI * (k * n) as f64 / n_fft as f64;
            re += x * ang.cos();
            im += x * ang.sin();
        }
        out.push(re * re + im * im);
    }
    out
}

fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let half = len / 2;
        for start in (0..n).step_by(len) {
            let (mut cr, mut ci) = (1.0f64, 0.0f64);
            for k in start..start + half {
                let (ur, ui) = (re[k], im[k]);
                let (vr, vi) = (
                    re[k + half] * cr - im[k + half] * ci,
                    re[k + half] * ci + im[k + half] * cr,
                );
                re[k] = ur + vr;
                im[k] = ui + vi;
                re[k + half] = ur - vr;
                im[k + half] = ui - vi;
                let next_cr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = next_cr;
            }
        }
        len <<= 1;
    }
}

/// Periodic Hann window.
fn hann(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect()
}

// ── Pipeline operations ──────────────────────────────────────────────

/// Frame count for `n` samples: `floor((n - win) / hop) + 1`.
pub fn frame_count(n_samples: usize, cfg: &FrontendConfig) -> Option<usize> {
    if n_samples < cfg.win_len {
        None
    } else {
        Some((n_samples - cfg.win_len) / cfg.hop + 1)
    }
}

/// Converts a clip at the configured rate into its log-mel spectrogram.
pub fn log_mel(clip: &AudioClip, cfg: &FrontendConfig) -> Result<MelSpectrogram> {
    if clip.sample_rate != cfg.sample_rate {
        return Err(Error::Input(format!(
            "clip rate {} != configured rate {} (resample first)",
            clip.sample_rate, cfg.sample_rate
        )));
    }
    let frames = frame_count(clip.samples.len(), cfg).ok_or_else(|| {
        Error::Input(format!(
            "clip of {} samples is shorter than one {}-sample frame",
            clip.samples.len(),
            cfg.win_len
        ))
    })?;
    let window = hann(cfg.win_len);
    let bank = MelFilterbank::new(cfg.sample_rate, cfg.n_fft);
    let mut data = Vec::with_capacity(frames * N_MELS);
    let mut frame = vec![0f64; cfg.win_len];
    for t in 0..frames {
        let start = t * cfg.hop;
        for (i, w) in window.iter().enumerate() {
            frame[i] = clip.samples[start + i] as f64 * w;
        }
        let power = power_spectrum(&frame, cfg.n_fft);
        for e in bank.apply(&power) {
            data.push(e.max(cfg.floor).ln() as f32);
        }
    }
    MelSpectrogram::new(data, frames, cfg.frame_hop_secs(), false)
}

/// Fixes the frame count: truncates tail frames or appends `ln(floor)` rows.
pub fn pad_or_truncate(spec: &MelSpectrogram, target_frames: usize, floor: f64) -> MelSpectrogram {
    if spec.frames == target_frames {
        return spec.clone();
    }
    let mut data;
    if spec.frames > target_frames {
        data = spec.data[..target_frames * N_MELS].to_vec();
    } else {
        data = spec.data.clone();
        data.resize(target_frames * N_MELS, floor.ln() as f32);
    }
    MelSpectrogram { data, frames: target_frames, frame_hop: spec.frame_hop, normalized: spec.normalized }
}

/// AST-style standardization: `(cell - mean) / (2 * std)`.
pub fn normalize(spec: &MelSpectrogram, mean: f64, std: f64) -> Result<MelSpectrogram> {
    if std <= 0.0 {
        return Err(Error::Input(format!("normalize: std must be > 0, got {std}")));
    }
    let denom = 2.0 * std;
    let data: Vec<f32> = spec.data.iter().map(|&v| ((v as f64 - mean) / denom) as f32).collect();
    Ok(MelSpectrogram { data, frames: spec.frames, frame_hop: spec.frame_hop, normalized: true })
}

// ── Dataset statistics ───────────────────────────────────────────────

/// Scalar statistics over every cell of a feature set.
#[derive(Debug, Clone, Copy)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
    pub cells: u64,
    /// True when the variance collapsed to zero.
    pub degenerate: bool,
}

/// One-pass accumulator: sum and sum of squares in f64, shifted by the first
/// cell so near-constant data does not cancel catastrophically.
#[derive(Debug, Default)]
pub struct StatsAccumulator {
    origin: Option<f64>,
    sum: f64,
    sumsq: f64,
    n: u64,
}

impl StatsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, spec: &MelSpectrogram) {
        for &v in &spec.data {
            let origin = *self.origin.get_or_insert(v as f64);
            let d = v as f64 - origin;
            self.sum += d;
            self.sumsq += d * d;
            self.n += 1;
        }
    }

    pub fn finalize(&self) -> Result<FeatureStats> {
        if self.n == 0 {
            return Err(Error::Input("no spectrogram cells to aggregate".into()));
        }
        let n = self.n as f64;
        let shifted_mean = self.sum / n;
        let mean = self.origin.unwrap_or(0.0) + shifted_mean;
        let var = (self.sumsq / n - shifted_mean * shifted_mean).max(0.0);
        let std = var.sqrt();
        Ok(FeatureStats { mean, std, cells: self.n, degenerate: std == 0.0 })
    }
}

// ── Feature cache (ASMF) ─────────────────────────────────────────────

const CACHE_MAGIC: &[u8; 4] = b"ASMF";

/// Encodes an un-normalized spectrogram: magic, u32 frame count, u32 mel
/// count, then row-major little-endian f32 cells.
pub fn encode_feature_cache(spec: &MelSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + spec.data.len() * 4);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(spec.frames as u32).to_le_bytes());
    out.extend_from_slice(&(N_MELS as u32).to_le_bytes());
    for &v in &spec.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_feature_cache(bytes: &[u8], frame_hop: f64) -> Result<MelSpectrogram> {
    if bytes.get(0..4) != Some(CACHE_MAGIC.as_slice()) {
        return Err(Error::Parse("feature cache: bad magic".into()));
    }
    let frames = u32::from_le_bytes(
        bytes.get(4..8).ok_or_else(|| Error::Parse("feature cache: truncated header".into()))?.try_into().unwrap(),
    ) as usize;
    let mels = u32::from_le_bytes(
        bytes.get(8..12).ok_or_else(|| Error::Parse("feature cache: truncated header".into()))?.try_into().unwrap(),
    ) as usize;
    if mels != N_MELS {
        return Err(Error::Format(format!("feature cache: mel count {mels}, want {N_MELS}")));
    }
    let want = frames * N_MELS * 4;
    let payload = bytes
        .get(12..12 + want)
        .ok_or_else(|| Error::Parse("feature cache: truncated payload".into()))?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MelSpectrogram::new(data, frames, frame_hop, false)
}
