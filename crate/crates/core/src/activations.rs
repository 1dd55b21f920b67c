//! The four activation functions compared by the model: GELU, Mish, Swish,
//! and Acon-C with learnable per-channel parameters.
//!
//! Scalar math is done in f64. GELU uses the exact error function, not the
//! tanh approximation; the CDF goes through `erfc` so large negative inputs
//! keep their (tiny, nonzero) value instead of cancelling to zero.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Real;
use crate::tensor::Tensor;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// Standard normal CDF.
fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Logistic sigmoid, branch-stable on both tails.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` with the usual overflow/underflow guards.
fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else if x < -20.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `x * Phi(x)` with the exact error function.
pub fn gelu(x: f64) -> f64 {
    x * phi(x)
}

pub fn gelu_grad(x: f64) -> f64 {
    phi(x) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `x * tanh(softplus(x))`.
pub fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

pub fn mish_grad(x: f64) -> f64 {
    let t = softplus(x).tanh();
    t + x * (1.0 - t * t) * sigmoid(x)
}

/// `x * sigmoid(x)`, fixed slope 1.
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Acon-C: `(p1 - p2) * x * sigmoid(beta * (p1 - p2) * x) + p2 * x`.
///
/// With `(p1, p2, beta) = (1, 0, 1)` this reduces to Swish; with `p1 == p2`
/// the switching term vanishes and the function is linear.
pub fn aconc(x: f64, p1: f64, p2: f64, beta: f64) -> f64 {
    let d = p1 - p2;
    d * x * sigmoid(beta * d * x) + p2 * x
}

/// Partial derivatives of [`aconc`] w.r.t. each argument.
pub struct AconGrads {
    pub x: f64,
    pub p1: f64,
    pub p2: f64,
    pub beta: f64,
}

pub fn aconc_grads(x: f64, p1: f64, p2: f64, beta: f64) -> AconGrads {
    let d = p1 - p2;
    let s = sigmoid(beta * d * x);
    let sp = s * (1.0 - s);
    let dx = d * s + beta * d * d * x * sp + p2;
    let dp1 = x * s + beta * d * x * x * sp;
    AconGrads {
        x: dx,
        p1: dp1,
        p2: x - dp1,
        beta: d * d * x * x * sp,
    }
}

// ── Selection and parameters ─────────────────────────────────────────

/// Activation selector as it appears in configs and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "gelu")]
    Gelu,
    #[serde(rename = "mish")]
    Mish,
    #[serde(rename = "swish")]
    Swish,
    #[serde(rename = "aconc")]
    AconC,
    #[serde(rename = "aconc-adapted")]
    AconCAdapted,
}

pub const ACTIVATION_NAMES: &str = "gelu|mish|swish|aconc|aconc-adapted";

impl Activation {
    pub fn is_aconc(self) -> bool {
        matches!(self, Activation::AconC | Activation::AconCAdapted)
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "mish" => Ok(Activation::Mish),
            "swish" => Ok(Activation::Swish),
            "aconc" => Ok(Activation::AconC),
            "aconc-adapted" => Ok(Activation::AconCAdapted),
            other => Err(Error::Input(format!(
                "unknown activation '{other}' (expected {ACTIVATION_NAMES})"
            ))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Gelu => "gelu",
            Activation::Mish => "mish",
            Activation::Swish => "swish",
            Activation::AconC => "aconc",
            Activation::AconCAdapted => "aconc-adapted",
        };
        f.write_str(s)
    }
}

/// Runtime activation at one site of the network. Acon-C sites own their
/// learnable per-channel parameter vectors.
#[derive(Debug, Clone)]
pub enum ActKind<T: Real> {
    Gelu,
    Mish,
    Swish,
    AconC {
        p1: Tensor<T>,
        p2: Tensor<T>,
        beta: Tensor<T>,
        adapted: bool,
    },
}

/// Noise scale for the adapted initialization: "near 1" / "near 0" read as
/// within 1% of the target values.
pub const ACONC_INIT_NOISE: f64 = 0.01;

/// Draws Acon-C parameter vectors for a site with `d` channels.
///
/// Adapted mode puts `p1` near 1 and `p2` near 0; plain mode draws both from
/// a standard normal. `beta` starts at 1 either way.
pub fn aconc_init<T: Real>(d: usize, adapted: bool, rng: &mut SplitMix64) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    aconc_init_with_scale(d, adapted, ACONC_INIT_NOISE, rng)
}

pub fn aconc_init_with_scale<T: Real>(
    d: usize,
    adapted: bool,
    noise: f64,
    rng: &mut SplitMix64,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let p1: Vec<T> = (0..d)
        .map(|_| {
            let g = rng.normal();
            T::from_f64(if adapted { 1.0 + noise * g } else { g })
        })
        .collect();
    let p2: Vec<T> = (0..d)
        .map(|_| {
            let g = rng.normal();
            T::from_f64(if adapted { noise * g } else { g })
        })
        .collect();
    let beta = vec![T::one(); d];
    (
        Tensor::vector(p1).expect("finite init").with_grad(),
        Tensor::vector(p2).expect("finite init").with_grad(),
        Tensor::vector(beta).expect("finite init").with_grad(),
    )
}
