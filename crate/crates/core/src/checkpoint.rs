//! Checkpoint container and channel-conversion surgery.
//!
//! On-disk layout: magic `ASMC`, u32 version, u32 header length, a UTF-8 JSON
//! header (kind, configs, tensor index, metadata), then the concatenated
//! little-endian f32 tensor payloads in index order.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::mixer::{tensor_schema, MixerConfig, MixerModel};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::Tensor32;

const MAGIC: &[u8; 4] = b"ASMC";
pub const FORMAT_VERSION: u32 = 1;

/// What the tensor map holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckpointKind {
    /// A complete model matching the embedded mixer config.
    #[serde(rename = "model")]
    Model,
    /// A 3-channel patch projection awaiting conversion.
    #[serde(rename = "rgb_projection")]
    RgbProjection,
}

/// In-memory checkpoint: configs, an ordered name -> tensor map, and
/// free-form metadata. Save/load round-trips are bit-exact.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub frontend: FrontendConfig,
    pub mixer: MixerConfig,
    pub tensors: Vec<(String, Tensor32)>,
    pub metadata: Vec<(String, String)>,
}

impl Checkpoint {
    /// Snapshots a model's parameters.
    pub fn from_model(
        model: &MixerModel<f32>,
        frontend: &FrontendConfig,
        metadata: Vec<(String, String)>,
    ) -> Self {
        let tensors = model
            .named_tensors()
            .into_iter()
            .map(|(name, t)| (name, Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("copy")))
            .collect();
        Checkpoint {
            kind: CheckpointKind::Model,
            frontend: frontend.clone(),
            mixer: *model.config(),
            tensors,
            metadata,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor32> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Reconstructs the model, checking the tensor set against the embedded
    /// config schema.
    pub fn to_model(&self) -> Result<MixerModel<f32>> {
        if self.kind != CheckpointKind::Model {
            return Err(Error::Consistency("checkpoint does not hold a full model".into()));
        }
        validate_model_schema(&self.mixer, &self.tensors)?;
        // build a structurally-correct model, then overwrite every tensor
        let mut rng = SplitMix64::new(0);
        let mut model = MixerModel::build(self.mixer, &mut rng)?;
        {
            let slots = model.tensors_mut();
            for (slot, (_, stored)) in slots.into_iter().zip(self.tensors.iter()) {
                *slot = stored.clone().with_grad();
            }
        }
        Ok(model)
    }
}

fn validate_model_schema(cfg: &MixerConfig, tensors: &[(String, Tensor32)]) -> Result<()> {
    let schema = tensor_schema(cfg);
    let missing: Vec<&str> = schema
        .iter()
        .filter(|(name, _)| !tensors.iter().any(|(n, _)| n == name))
        .map(|(name, _)| name.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Consistency(format!("missing tensors: {}", missing.join(", "))));
    }
    if tensors.len() != schema.len() {
        let extra: Vec<&str> = tensors
            .iter()
            .filter(|(n, _)| !schema.iter().any(|(sn, _)| sn == n))
            .map(|(n, _)| n.as_str())
            .collect();
        return Err(Error::Consistency(format!("unexpected tensors: {}", extra.join(", "))));
    }
    for ((name, want), (stored_name, t)) in schema.iter().zip(tensors) {
        if name != stored_name {
            return Err(Error::Consistency(format!(
                "tensor order mismatch: expected {name}, found {stored_name}"
            )));
        }
        if t.shape() != want.as_slice() {
            return Err(Error::Consistency(format!(
                "tensor {name}: shape {:?}, config wants {want:?}",
                t.shape()
            )));
        }
    }
    Ok(())
}

// ── Serialization ────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct TensorIndexEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: CheckpointKind,
    frontend: FrontendConfig,
    mixer: MixerConfig,
    tensors: Vec<TensorIndexEntry>,
    metadata: Vec<(String, String)>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut index = Vec::with_capacity(ckpt.tensors.len());
    let mut offset = 0u64;
    for (name, t) in &ckpt.tensors {
        index.push(TensorIndexEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
        offset += (t.numel() * 4) as u64;
    }
    let header = Header {
        kind: ckpt.kind,
        frontend: ckpt.frontend.clone(),
        mixer: ckpt.mixer,
        tensors: index,
        metadata: ckpt.metadata.clone(),
    };
    let header_json = serde_json::to_string(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + header_json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(header_json.as_bytes());
    for (_, t) in &ckpt.tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.get(0..4) != Some(MAGIC.as_slice()) {
        return Err(Error::Parse("checkpoint magic: expected 'ASMC'".into()));
    }
    let version = u32::from_le_bytes(
        bytes.get(4..8).ok_or_else(|| Error::Parse("truncated at version field".into()))?.try_into().unwrap(),
    );
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "checkpoint version: expected {FORMAT_VERSION}, got {version}"
        )));
    }
    let header_len = u32::from_le_bytes(
        bytes.get(8..12).ok_or_else(|| Error::Parse("truncated at header length".into()))?.try_into().unwrap(),
    ) as usize;
    let header_bytes = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| Error::Parse("truncated header block".into()))?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::Parse(format!("header json: {e}")))?;
    let payload = &bytes[12 + header_len..];

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + numel * 4;
        let chunk = payload.get(start..end).ok_or_else(|| {
            Error::Parse(format!("tensor {}: payload truncated at {start}..{end}", entry.name))
        })?;
        let data: Vec<f32> =
            chunk.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(entry.shape.clone(), data)
            .map_err(|e| Error::Parse(format!("tensor {}: {e}", entry.name)))?;
        tensors.push((entry.name.clone(), t));
    }
    let ckpt = Checkpoint {
        kind: header.kind,
        frontend: header.frontend,
        mixer: header.mixer,
        tensors,
        metadata: header.metadata,
    };
    match ckpt.kind {
        CheckpointKind::Model => validate_model_schema(&ckpt.mixer, &ckpt.tensors)?,
        CheckpointKind::RgbProjection => {
            rgb_projection_from(&ckpt)?;
        }
    }
    Ok(ckpt)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// FNV-1a 64-bit digest, hex-encoded. Identifies source checkpoints in
/// conversion metadata.
pub fn digest(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

// ── Channel conversion ───────────────────────────────────────────────

/// ITU-R BT.601 luma coefficients for R, G, B.
pub const LUMA_COEFFS: [f64; 3] = [0.299, 0.587, 0.114];

/// How to collapse three projection channels into one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvertMode {
    /// Weighted grayscale map: `0.299 R + 0.587 G + 0.114 B`.
    Luma,
    /// Plain channel sum, the AST baseline.
    Sum,
}

impl ConvertMode {
    pub fn coefficients(self) -> [f64; 3] {
        match self {
            ConvertMode::Luma => LUMA_COEFFS,
            ConvertMode::Sum => [1.0, 1.0, 1.0],
        }
    }
}

impl FromStr for ConvertMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "luma" => Ok(ConvertMode::Luma),
            "sum" => Ok(ConvertMode::Sum),
            other => Err(Error::Input(format!("unknown mode '{other}' (expected luma|sum)"))),
        }
    }
}

impl fmt::Display for ConvertMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConvertMode::Luma => "luma",
            ConvertMode::Sum => "sum",
        })
    }
}

/// A three-channel patch projection, channel-major: rows `0..pp` are the R
/// block, `pp..2pp` G, `2pp..3pp` B, where `pp = ph * pw`.
#[derive(Debug, Clone)]
pub struct RgbProjectionWeights {
    pub weight: Tensor32,
    pub bias: Tensor32,
    pub patch: (usize, usize),
}

impl RgbProjectionWeights {
    pub fn new(weight: Tensor32, bias: Tensor32, patch: (usize, usize)) -> Result<Self> {
        let (rows, dim) = weight.dims2()?;
        let pp = patch.0 * patch.1;
        if rows != 3 * pp {
            return Err(Error::Input(format!(
                "projection has {rows} rows; channel axis of 3 needs {}",
                3 * pp
            )));
        }
        if bias.shape() != [dim] {
            return Err(Error::Input(format!(
                "bias shape {:?} does not match projection width {dim}",
                bias.shape()
            )));
        }
        Ok(RgbProjectionWeights { weight, bias, patch })
    }

    /// Wraps the projection in a checkpoint whose mixer config describes the
    /// intended target sizes.
    pub fn into_checkpoint(self, frontend: FrontendConfig, mixer: MixerConfig) -> Checkpoint {
        Checkpoint {
            kind: CheckpointKind::RgbProjection,
            frontend,
            mixer,
            tensors: vec![
                ("patch_embed.weight".into(), self.weight),
                ("patch_embed.bias".into(), self.bias),
            ],
            metadata: Vec::new(),
        }
    }
}

/// Extracts the 3-channel projection from an `rgb_projection` checkpoint.
pub fn rgb_projection_from(ckpt: &Checkpoint) -> Result<RgbProjectionWeights> {
    let weight = ckpt
        .tensor("patch_embed.weight")
        .ok_or_else(|| Error::Consistency("missing tensors: patch_embed.weight".into()))?;
    let bias = ckpt
        .tensor("patch_embed.bias")
        .ok_or_else(|| Error::Consistency("missing tensors: patch_embed.bias".into()))?;
    RgbProjectionWeights::new(weight.clone(), bias.clone(), ckpt.mixer.patch)
}

/// Collapses the channel axis: per spatial position and output unit,
/// `W1 = c_R W_R + c_G W_G + c_B W_B` (combination in f64, rounded once).
/// The bias is unchanged.
pub fn rgb_to_gray(rgb: &RgbProjectionWeights, mode: ConvertMode) -> (Tensor32, Tensor32) {
    let (rows, dim) = rgb.weight.dims2().expect("validated 2-d");
    let pp = rows / 3;
    let [cr, cg, cb] = mode.coefficients();
    let w = rgb.weight.data();
    let mut out = vec![0f32; pp * dim];
    for r in 0..pp {
        for j in 0..dim {
            let v = cr * w[r * dim + j] as f64
                + cg * w[(pp + r) * dim + j] as f64
                + cb * w[(2 * pp + r) * dim + j] as f64;
            out[r * dim + j] = v as f32;
        }
    }
    (Tensor::new(vec![pp, dim], out).expect("finite"), rgb.bias.clone())
}

/// Builds a model from `target` whose patch projection comes from a foreign
/// 3-channel checkpoint via [`rgb_to_gray`]; every other parameter is freshly
/// initialized. Returns the model plus metadata recording the mode and the
/// source digest.
pub fn import_foreign(
    source: &Checkpoint,
    target_mixer: MixerConfig,
    mode: ConvertMode,
    rng: &mut SplitMix64,
) -> Result<(MixerModel<f32>, Vec<(String, String)>)> {
    let rgb = rgb_projection_from(source)?;
    if rgb.patch != target_mixer.patch {
        return Err(Error::Input(format!(
            "source patch {:?} does not match target patch {:?}",
            rgb.patch, target_mixer.patch
        )));
    }
    let (w, b) = rgb_to_gray(&rgb, mode);
    let (_, src_dim) = w.dims2().expect("2-d");
    if src_dim != target_mixer.dim {
        return Err(Error::Input(format!(
            "source embedding width {src_dim} does not match target dim {}",
            target_mixer.dim
        )));
    }
    let mut model = MixerModel::build(target_mixer, rng)?;
    model.patch_w = w.with_grad();
    model.patch_b = b.with_grad();
    let meta = vec![
        ("convert.mode".into(), mode.to_string()),
        ("convert.source_digest".into(), digest(&encode_checkpoint(source))),
    ];
    Ok((model, meta))
}
