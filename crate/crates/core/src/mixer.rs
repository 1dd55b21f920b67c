//! The ASM network: patchify, linear projection to tokens, a stack of Mixer
//! blocks (token-mixing then channel-mixing, both pre-norm with residuals),
//! and a global-average-pooled classifier head.

use serde::{Deserialize, Serialize};

use crate::activations::{aconc_init, ActKind, Activation};
use crate::error::{Error, Result};
use crate::frontend::{MelSpectrogram, N_MELS};
use crate::rng::SplitMix64;
use crate::scalar::Real;
use crate::tensor::{Tape, Tensor, Var};

/// LayerNorm epsilon used throughout the network.
pub const LN_EPS: f64 = 1e-5;

// ── Config ───────────────────────────────────────────────────────────

fn d_patch() -> (usize, usize) {
    (16, 16)
}
fn d_dim() -> usize {
    768
}
fn d_depth() -> usize {
    12
}
fn d_token_hidden() -> usize {
    384
}
fn d_channel_hidden() -> usize {
    3072
}
fn d_activation() -> Activation {
    Activation::Gelu
}
fn d_classes() -> usize {
    35
}
fn d_input() -> (usize, usize) {
    (128, N_MELS)
}

/// Architecture hyperparameters. Defaults are the paper's sizes: 16x16
/// patches, 768-dim embeddings, 12 blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixerConfig {
    #[serde(default = "d_patch")]
    pub patch: (usize, usize),
    #[serde(default = "d_patch")]
    pub stride: (usize, usize),
    #[serde(default = "d_dim")]
    pub dim: usize,
    #[serde(default = "d_depth")]
    pub depth: usize,
    #[serde(default = "d_token_hidden")]
    pub token_hidden: usize,
    #[serde(default = "d_channel_hidden")]
    pub channel_hidden: usize,
    #[serde(default = "d_activation")]
    pub activation: Activation,
    #[serde(default = "d_classes")]
    pub num_classes: usize,
    #[serde(default = "d_input")]
    pub input_shape: (usize, usize),
}

impl Default for MixerConfig {
    fn default() -> Self {
        MixerConfig {
            patch: d_patch(),
            stride: d_patch(),
            dim: d_dim(),
            depth: d_depth(),
            token_hidden: d_token_hidden(),
            channel_hidden: d_channel_hidden(),
            activation: d_activation(),
            num_classes: d_classes(),
            input_shape: d_input(),
        }
    }
}

impl MixerConfig {
    pub fn validate(&self) -> Result<()> {
        let (ph, pw) = self.patch;
        let (sh, sw) = self.stride;
        let (rows, cols) = self.input_shape;
        for (name, v) in [
            ("mixer.patch", ph.min(pw)),
            ("mixer.stride", sh.min(sw)),
            ("mixer.dim", self.dim),
            ("mixer.depth", self.depth),
            ("mixer.token_hidden", self.token_hidden),
            ("mixer.channel_hidden", self.channel_hidden),
            ("mixer.num_classes", self.num_classes),
            ("mixer.input_shape", rows.min(cols)),
        ] {
            if v == 0 {
                return Err(Error::Input(format!("{name} must be >= 1")));
            }
        }
        if sh > ph || sw > pw {
            return Err(Error::Input(format!(
                "mixer.stride {:?} may not exceed mixer.patch {:?} (gaps)",
                self.stride, self.patch
            )));
        }
        if rows < ph || cols < pw {
            return Err(Error::Input(format!(
                "mixer.input_shape {:?} smaller than mixer.patch {:?}",
                self.input_shape, self.patch
            )));
        }
        Ok(())
    }

    /// Patch grid as (time steps, frequency steps).
    pub fn token_grid(&self) -> (usize, usize) {
        let t = (self.input_shape.0 - self.patch.0) / self.stride.0 + 1;
        let f = (self.input_shape.1 - self.patch.1) / self.stride.1 + 1;
        (t, f)
    }

    /// Token count S.
    pub fn tokens(&self) -> usize {
        let (t, f) = self.token_grid();
        t * f
    }

    /// Flattened patch length.
    pub fn patch_len(&self) -> usize {
        self.patch.0 * self.patch.1
    }
}

// ── Parameter schema ─────────────────────────────────────────────────

/// Canonical (name, shape) list for a config. Construction, checkpoints,
/// and parameter accounting all derive from this single source.
pub fn tensor_schema(cfg: &MixerConfig) -> Vec<(String, Vec<usize>)> {
    let s = cfg.tokens();
    let (dim, th, ch) = (cfg.dim, cfg.token_hidden, cfg.channel_hidden);
    let mut out = Vec::new();
    out.push(("patch_embed.weight".into(), vec![cfg.patch_len(), dim]));
    out.push(("patch_embed.bias".into(), vec![dim]));
    for i in 0..cfg.depth {
        let p = |suffix: &str| format!("blocks.{i}.{suffix}");
        out.push((p("norm1.gamma"), vec![dim]));
        out.push((p("norm1.beta"), vec![dim]));
        out.push((p("token_mlp.w1"), vec![s, th]));
        out.push((p("token_mlp.b1"), vec![th]));
        out.push((p("token_mlp.w2"), vec![th, s]));
        out.push((p("token_mlp.b2"), vec![s]));
        if cfg.activation.is_aconc() {
            out.push((p("token_mlp.act.p1"), vec![th]));
            out.push((p("token_mlp.act.p2"), vec![th]));
            out.push((p("token_mlp.act.beta"), vec![th]));
        }
        out.push((p("norm2.gamma"), vec![dim]));
        out.push((p("norm2.beta"), vec![dim]));
        out.push((p("channel_mlp.w1"), vec![dim, ch]));
        out.push((p("channel_mlp.b1"), vec![ch]));
        out.push((p("channel_mlp.w2"), vec![ch, dim]));
        out.push((p("channel_mlp.b2"), vec![dim]));
        if cfg.activation.is_aconc() {
            out.push((p("channel_mlp.act.p1"), vec![ch]));
            out.push((p("channel_mlp.act.p2"), vec![ch]));
            out.push((p("channel_mlp.act.beta"), vec![ch]));
        }
    }
    out.push(("norm.gamma".into(), vec![dim]));
    out.push(("norm.beta".into(), vec![dim]));
    out.push(("head.weight".into(), vec![dim, cfg.num_classes]));
    out.push(("head.bias".into(), vec![cfg.num_classes]));
    out
}

/// Exact trainable-parameter total.
pub fn param_count(cfg: &MixerConfig) -> u64 {
    tensor_schema(cfg).iter().map(|(_, s)| s.iter().product::<usize>() as u64).sum()
}

/// Per-component totals: `patch_embed`, one row per block, `norm`, `head`.
/// Rows sum to `param_count` exactly.
pub fn param_breakdown(cfg: &MixerConfig) -> Vec<(String, u64)> {
    let mut rows: Vec<(String, u64)> = Vec::new();
    for (name, shape) in tensor_schema(cfg) {
        let n: u64 = shape.iter().product::<usize>() as u64;
        let component = if let Some(rest) = name.strip_prefix("blocks.") {
            let idx = rest.split('.').next().unwrap();
            format!("blocks.{idx}")
        } else if name.starts_with("patch_embed") {
            "patch_embed".into()
        } else if name.starts_with("head") {
            "head".into()
        } else {
            "norm".into()
        };
        match rows.last_mut() {
            Some((c, total)) if *c == component => *total += n,
            _ => rows.push((component, n)),
        }
    }
    rows
}

// ── Patchify ─────────────────────────────────────────────────────────

/// Cuts a `rows x cols` grid into flattened patches: patches are enumerated
/// time-major then frequency, and each patch is flattened row-major (time
/// rows, then mel columns).
pub fn patchify<T: Real>(grid: &Tensor<T>, cfg: &MixerConfig) -> Result<Tensor<T>> {
    let (rows, cols) = grid.dims2()?;
    if (rows, cols) != cfg.input_shape {
        return Err(Error::Input(format!(
            "grid shape ({rows}, {cols}) != configured input {:?}",
            cfg.input_shape
        )));
    }
    let (ph, pw) = cfg.patch;
    let (sh, sw) = cfg.stride;
    let (t_steps, f_steps) = cfg.token_grid();
    let data = grid.data();
    let mut out = Vec::with_capacity(t_steps * f_steps * ph * pw);
    for ti in 0..t_steps {
        for fi in 0..f_steps {
            let (r0, c0) = (ti * sh, fi * sw);
            for r in 0..ph {
                for c in 0..pw {
                    out.push(data[(r0 + r) * cols + (c0 + c)]);
                }
            }
        }
    }
    Tensor::new(vec![t_steps * f_steps, ph * pw], out)
}

/// [`patchify`] for a mel spectrogram.
pub fn patchify_spec<T: Real>(spec: &MelSpectrogram, cfg: &MixerConfig) -> Result<Tensor<T>> {
    patchify(&spec.to_tensor::<T>(), cfg)
}

// ── Model ────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Norm<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Mlp<T: Real> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
    pub act: ActKind<T>,
}

#[derive(Debug, Clone)]
pub struct MixerBlock<T: Real> {
    pub norm1: Norm<T>,
    pub token_mlp: Mlp<T>,
    pub norm2: Norm<T>,
    pub channel_mlp: Mlp<T>,
}

/// The full network. `tokens` is fixed at construction; the token-MLP shapes
/// assume it.
#[derive(Debug, Clone)]
pub struct MixerModel<T: Real> {
    cfg: MixerConfig,
    tokens: usize,
    pub patch_w: Tensor<T>,
    pub patch_b: Tensor<T>,
    pub blocks: Vec<MixerBlock<T>>,
    pub norm: Norm<T>,
    pub head_w: Tensor<T>,
    pub head_b: Tensor<T>,
}

fn init_weight<T: Real>(rows: usize, cols: usize, rng: &mut SplitMix64) -> Tensor<T> {
    let bound = 1.0 / (rows as f64).sqrt();
    let data: Vec<T> = (0..rows * cols).map(|_| T::from_f64(rng.uniform(-bound, bound))).collect();
    Tensor::new(vec![rows, cols], data).expect("finite init").with_grad()
}

fn zeros_param<T: Real>(len: usize) -> Tensor<T> {
    Tensor::vector(vec![T::zero(); len]).expect("zeros").with_grad()
}

fn ones_param<T: Real>(len: usize) -> Tensor<T> {
    Tensor::vector(vec![T::one(); len]).expect("ones").with_grad()
}

fn init_act<T: Real>(activation: Activation, d: usize, rng: &mut SplitMix64) -> ActKind<T> {
    match activation {
        Activation::Gelu => ActKind::Gelu,
        Activation::Mish => ActKind::Mish,
        Activation::Swish => ActKind::Swish,
        Activation::AconC | Activation::AconCAdapted => {
            let adapted = activation == Activation::AconCAdapted;
            let (p1, p2, beta) = aconc_init(d, adapted, rng);
            ActKind::AconC { p1, p2, beta, adapted }
        }
    }
}

fn init_mlp<T: Real>(
    d_in: usize,
    hidden: usize,
    d_out: usize,
    activation: Activation,
    rng: &mut SplitMix64,
) -> Mlp<T> {
    Mlp {
        w1: init_weight(d_in, hidden, rng),
        b1: zeros_param(hidden),
        w2: init_weight(hidden, d_out, rng),
        b2: zeros_param(d_out),
        act: init_act(activation, hidden, rng),
    }
}

impl<T: Real> MixerModel<T> {
    /// Initializes a model: weights uniform in `[-1/sqrt(fan_in),
    /// 1/sqrt(fan_in)]`, biases zero, norm gains one, Acon-C parameters via
    /// their own initializer. Identical seeds give bit-identical models.
    pub fn build(cfg: MixerConfig, rng: &mut SplitMix64) -> Result<Self> {
        cfg.validate()?;
        let s = cfg.tokens();
        let dim = cfg.dim;
        let patch_w = init_weight(cfg.patch_len(), dim, rng);
        let patch_b = zeros_param(dim);
        let mut blocks = Vec::with_capacity(cfg.depth);
        for _ in 0..cfg.depth {
            blocks.push(MixerBlock {
                norm1: Norm { gamma: ones_param(dim), beta: zeros_param(dim) },
                token_mlp: init_mlp(s, cfg.token_hidden, s, cfg.activation, rng),
                norm2: Norm { gamma: ones_param(dim), beta: zeros_param(dim) },
                channel_mlp: init_mlp(dim, cfg.channel_hidden, dim, cfg.activation, rng),
            });
        }
        let norm = Norm { gamma: ones_param(dim), beta: zeros_param(dim) };
        let head_w = init_weight(dim, cfg.num_classes, rng);
        let head_b = zeros_param(cfg.num_classes);
        Ok(MixerModel { cfg, tokens: s, patch_w, patch_b, blocks, norm, head_w, head_b })
    }

    pub fn config(&self) -> &MixerConfig {
        &self.cfg
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// Parameters in schema order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
        out.push(("patch_embed.weight".into(), &self.patch_w));
        out.push(("patch_embed.bias".into(), &self.patch_b));
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |suffix: &str| format!("blocks.{i}.{suffix}");
            out.push((p("norm1.gamma"), &b.norm1.gamma));
            out.push((p("norm1.beta"), &b.norm1.beta));
            for (mlp_name, mlp) in [("token_mlp", &b.token_mlp), ("channel_mlp", &b.channel_mlp)] {
                out.push((p(&format!("{mlp_name}.w1")), &mlp.w1));
                out.push((p(&format!("{mlp_name}.b1")), &mlp.b1));
                out.push((p(&format!("{mlp_name}.w2")), &mlp.w2));
                out.push((p(&format!("{mlp_name}.b2")), &mlp.b2));
                if let ActKind::AconC { p1, p2, beta, .. } = &mlp.act {
                    out.push((p(&format!("{mlp_name}.act.p1")), p1));
                    out.push((p(&format!("{mlp_name}.act.p2")), p2));
                    out.push((p(&format!("{mlp_name}.act.beta")), beta));
                }
                if mlp_name == "token_mlp" {
                    out.push((p("norm2.gamma"), &b.norm2.gamma));
                    out.push((p("norm2.beta"), &b.norm2.beta));
                }
            }
        }
        out.push(("norm.gamma".into(), &self.norm.gamma));
        out.push(("norm.beta".into(), &self.norm.beta));
        out.push(("head.weight".into(), &self.head_w));
        out.push(("head.bias".into(), &self.head_b));
        out
    }

    /// Mutable view of the parameters, in the same order as
    /// [`MixerModel::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        out.push(&mut self.patch_w);
        out.push(&mut self.patch_b);
        for b in self.blocks.iter_mut() {
            out.push(&mut b.norm1.gamma);
            out.push(&mut b.norm1.beta);
            for (is_token, mlp, norm2) in [
                (true, &mut b.token_mlp, Some(&mut b.norm2)),
                (false, &mut b.channel_mlp, None),
            ] {
                out.push(&mut mlp.w1);
                out.push(&mut mlp.b1);
                out.push(&mut mlp.w2);
                out.push(&mut mlp.b2);
                if let ActKind::AconC { p1, p2, beta, .. } = &mut mlp.act {
                    out.push(p1);
                    out.push(p2);
                    out.push(beta);
                }
                if is_token {
                    let n2 = norm2.unwrap();
                    out.push(&mut n2.gamma);
                    out.push(&mut n2.beta);
                }
            }
        }
        out.push(&mut self.norm.gamma);
        out.push(&mut self.norm.beta);
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    /// Registers every parameter on a tape. The flat var list parallels
    /// [`MixerModel::named_tensors`].
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundModel {
        fn leaf<T: Real>(tape: &mut Tape<T>, flat: &mut Vec<Var>, t: &Tensor<T>) -> Var {
            let v = tape.leaf(t);
            flat.push(v);
            v
        }
        fn bind_mlp<T: Real>(tape: &mut Tape<T>, flat: &mut Vec<Var>, mlp: &Mlp<T>) -> BoundMlp {
            let w1 = leaf(tape, flat, &mlp.w1);
            let b1 = leaf(tape, flat, &mlp.b1);
            let w2 = leaf(tape, flat, &mlp.w2);
            let b2 = leaf(tape, flat, &mlp.b2);
            let act = match &mlp.act {
                ActKind::Gelu => BoundAct::Gelu,
                ActKind::Mish => BoundAct::Mish,
                ActKind::Swish => BoundAct::Swish,
                ActKind::AconC { p1, p2, beta, .. } => BoundAct::AconC {
                    p1: leaf(tape, flat, p1),
                    p2: leaf(tape, flat, p2),
                    beta: leaf(tape, flat, beta),
                },
            };
            BoundMlp { w1, b1, w2, b2, act }
        }

        let mut flat = Vec::new();
        let patch_w = leaf(tape, &mut flat, &self.patch_w);
        let patch_b = leaf(tape, &mut flat, &self.patch_b);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let n1g = leaf(tape, &mut flat, &b.norm1.gamma);
            let n1b = leaf(tape, &mut flat, &b.norm1.beta);
            let token_mlp = bind_mlp(tape, &mut flat, &b.token_mlp);
            let n2g = leaf(tape, &mut flat, &b.norm2.gamma);
            let n2b = leaf(tape, &mut flat, &b.norm2.beta);
            let channel_mlp = bind_mlp(tape, &mut flat, &b.channel_mlp);
            blocks.push(BoundBlock { n1g, n1b, token_mlp, n2g, n2b, channel_mlp });
        }
        let norm_g = leaf(tape, &mut flat, &self.norm.gamma);
        let norm_b = leaf(tape, &mut flat, &self.norm.beta);
        let head_w = leaf(tape, &mut flat, &self.head_w);
        let head_b = leaf(tape, &mut flat, &self.head_b);
        BoundModel { patch_w, patch_b, blocks, norm_g, norm_b, head_w, head_b, flat }
    }

    /// Forward pass over pre-cut patches, returning the `[1, C]` logits var.
    pub fn forward_on(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundModel,
        patches: &Tensor<T>,
    ) -> Result<Var> {
        let (s, plen) = patches.dims2()?;
        if s != self.tokens || plen != self.cfg.patch_len() {
            return Err(Error::Dimension(format!(
                "patches {s}x{plen}, model wants {}x{}",
                self.tokens,
                self.cfg.patch_len()
            )));
        }
        let x0 = tape.leaf(patches);
        let mut x = tape.linear(x0, bound.patch_w, bound.patch_b)?;
        for b in &bound.blocks {
            x = mixer_block_on(tape, x, b)?;
        }
        let normed = tape.layer_norm(x, bound.norm_g, bound.norm_b, LN_EPS)?;
        let pooled = tape.mean_rows(normed)?;
        let pooled_row = tape.reshape(pooled, vec![1, self.cfg.dim])?;
        tape.linear(pooled_row, bound.head_w, bound.head_b)
    }

    /// Inference on a raw input grid: patchify, run the network without
    /// gradient tracking, return `C` logits.
    pub fn forward(&self, grid: &Tensor<T>) -> Result<Tensor<T>> {
        let patches = patchify(grid, &self.cfg)?;
        self.forward_patches(&patches)
    }

    /// Inference over pre-cut patches.
    pub fn forward_patches(&self, patches: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let frozen = self.frozen();
        let bound = frozen.bind(&mut tape);
        let logits = frozen.forward_on(&mut tape, &bound, patches)?;
        Tensor::vector(tape.value(logits).to_vec())
    }

    /// Inference on a mel spectrogram.
    pub fn forward_spec(&self, spec: &MelSpectrogram) -> Result<Tensor<T>> {
        self.forward(&spec.to_tensor())
    }

    /// A gradient-free clone (leaves bind as constants).
    fn frozen(&self) -> MixerModel<T> {
        let mut m = self.clone();
        for t in m.tensors_mut() {
            *t = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("copy");
        }
        m
    }

    /// Adds `scale * tape-gradient` into each parameter's grad buffer.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, bound: &BoundModel, scale: f64) {
        let vars = bound.flat.clone();
        for (t, v) in self.tensors_mut().into_iter().zip(vars) {
            if let Some(g) = tape.grad(v) {
                let scaled: Vec<T> = g.iter().map(|x| T::from_f64(x.as_f64() * scale)).collect();
                t.accumulate_grad(&scaled);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }
}

/// One Mixer block on the tape:
/// `U = X + T(MLP_tok(T(LN1(X))))`, `Y = U + MLP_ch(LN2(U))`.
fn mixer_block_on<T: Real>(tape: &mut Tape<T>, x: Var, b: &BoundBlock) -> Result<Var> {
    let normed = tape.layer_norm(x, b.n1g, b.n1b, LN_EPS)?;
    let t = tape.transpose(normed)?;
    let mixed = mlp_on(tape, t, &b.token_mlp)?;
    let back = tape.transpose(mixed)?;
    let u = tape.add(x, back)?;

    let normed2 = tape.layer_norm(u, b.n2g, b.n2b, LN_EPS)?;
    let ch = mlp_on(tape, normed2, &b.channel_mlp)?;
    tape.add(u, ch)
}

fn mlp_on<T: Real>(tape: &mut Tape<T>, x: Var, mlp: &BoundMlp) -> Result<Var> {
    let h = tape.linear(x, mlp.w1, mlp.b1)?;
    let a = match mlp.act {
        BoundAct::Gelu => tape.gelu(h)?,
        BoundAct::Mish => tape.mish(h)?,
        BoundAct::Swish => tape.swish(h)?,
        BoundAct::AconC { p1, p2, beta } => tape.aconc(h, p1, p2, beta)?,
    };
    tape.linear(a, mlp.w2, mlp.b2)
}

// ── Tape bindings ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub enum BoundAct {
    Gelu,
    Mish,
    Swish,
    AconC { p1: Var, p2: Var, beta: Var },
}

#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub act: BoundAct,
}

#[derive(Debug, Clone)]
pub struct BoundBlock {
    pub n1g: Var,
    pub n1b: Var,
    pub token_mlp: BoundMlp,
    pub n2g: Var,
    pub n2b: Var,
    pub channel_mlp: BoundMlp,
}

/// Tape-registered parameters; `flat` parallels `named_tensors()`.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub patch_w: Var,
    pub patch_b: Var,
    pub blocks: Vec<BoundBlock>,
    pub norm_g: Var,
    pub norm_b: Var,
    pub head_w: Var,
    pub head_b: Var,
    pub flat: Vec<Var>,
}
