//! Minimal RIFF/WAVE codec: 16-bit PCM, mono or stereo in, mono out.

use crate::error::{Error, Result};

/// Decoded mono audio. Samples are in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Input("audio clip has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::Input("sample out of [-1, 1] or non-finite".into()));
        }
        Ok(AudioClip { samples, sample_rate })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    let chunk = bytes
        .get(at..at + 4)
        .ok_or_else(|| Error::Parse(format!("truncated while reading {what}")))?;
    Ok(u32::from_le_bytes(chunk.try_into().unwrap()))
}

fn read_u16(bytes: &[u8], at: usize, what: &str) -> Result<u16> {
    let chunk = bytes
        .get(at..at + 2)
        .ok_or_else(|| Error::Parse(format!("truncated while reading {what}")))?;
    Ok(u16::from_le_bytes(chunk.try_into().unwrap()))
}

/// Parses a RIFF/WAVE byte stream. Accepts PCM 16-bit, 1 or 2 channels;
/// stereo is averaged to mono. Sample values are scaled by `1/32768`.
pub fn load_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.get(0..4) != Some(b"RIFF") {
        return Err(Error::Format("RIFF magic missing".into()));
    }
    if bytes.get(8..12) != Some(b"WAVE") {
        return Err(Error::Format("WAVE form type missing".into()));
    }

    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4, "chunk size")? as usize;
        let body = bytes
            .get(pos + 8..pos + 8 + size)
            .ok_or_else(|| Error::Parse(format!("truncated chunk '{}'", String::from_utf8_lossy(id))))?;
        match id {
            b"fmt " => {
                let audio_format = read_u16(body, 0, "fmt.audio_format")?;
                let channels = read_u16(body, 2, "fmt.channels")?;
                let rate = read_u32(body, 4, "fmt.sample_rate")?;
                let bits = read_u16(body, 14, "fmt.bits_per_sample")?;
                fmt = Some((audio_format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {} // skip LIST, fact, ...
        }
        pos += 8 + size + (size & 1); // chunks are word-aligned
    }

    let (audio_format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::Parse("missing fmt chunk".into()))?;
    if audio_format != 1 {
        return Err(Error::Format(format!(
            "fmt.audio_format: expected PCM (1), got {audio_format}"
        )));
    }
    if bits != 16 {
        return Err(Error::Format(format!(
            "fmt.bits_per_sample: expected 16, got {bits}"
        )));
    }
    if channels == 0 || channels > 2 {
        return Err(Error::Format(format!(
            "fmt.channels: expected 1 or 2, got {channels}"
        )));
    }
    let data = data.ok_or_else(|| Error::Parse("missing data chunk".into()))?;
    if data.len() % (2 * channels as usize) != 0 {
        return Err(Error::Parse("data chunk length not a whole number of frames".into()));
    }

    let ch = channels as usize;
    let frames = data.len() / (2 * ch);
    let mut samples = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut acc = 0f32;
        for c in 0..ch {
            let at = (f * ch + c) * 2;
            let v = i16::from_le_bytes([data[at], data[at + 1]]);
            acc += v as f32 / 32768.0;
        }
        samples.push(acc / ch as f32);
    }
    AudioClip::new(samples, rate)
}

/// Encodes mono samples as 16-bit PCM. Values are quantized with
/// `round(x * 32768)` clamped to the i16 range.
pub fn write_wav(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}
