//! Reverse-mode automatic differentiation on flat row-major tensors.
//!
//! The engine is define-by-run: a [`Tape`] is rebuilt for every forward pass,
//! records exactly the primitives the Mixer needs, and replays them in strict
//! reverse order on [`Tape::backward`]. Values are stored in the scalar type
//! `T`; every reduction (matmul inner product, mean, variance, loss) is
//! accumulated in `f64` before rounding back to `T`.

use crate::activations;
use crate::error::{Error, Result};
use crate::scalar::Real;

// ── Tensor ───────────────────────────────────────────────────────────

/// An n-dimensional value with optional gradient storage.
///
/// Invariants: `data.len() == shape.iter().product()`, all values finite,
/// and `grad` (when present) has the same length as `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Real> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::Dimension(format!("zero-length axis in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} wants {numel} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in tensor data".into()));
        }
        Ok(Tensor { shape, data, grad: None, requires_grad: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); numel], grad: None, requires_grad: false }
    }

    /// 2-D constructor from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<T>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    /// Marks the tensor as a trainable parameter.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Interprets the tensor as a matrix, returning `(rows, cols)`.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Dimension(format!("expected rank 2, got shape {other:?}"))),
        }
    }

    /// Adds `g` into the gradient buffer, allocating zeros on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) {
        let grad = self.grad.get_or_insert_with(|| vec![T::zero(); self.data.len()]);
        debug_assert_eq!(grad.len(), g.len());
        for (a, b) in grad.iter_mut().zip(g) {
            *a += *b;
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            for v in g.iter_mut() {
                *v = T::zero();
            }
        }
    }

    /// Casts every element, preserving shape. Exact for f32 -> f64.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            grad: None,
            requires_grad: self.requires_grad,
        }
    }
}

// ── Tape ─────────────────────────────────────────────────────────────

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    MulElem(usize, usize),
    Sum(usize),
    Linear { x: usize, w: usize, b: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, eps: f64 },
    Transpose(usize),
    MeanRows(usize),
    CrossEntropy { logits: usize, labels: Vec<usize> },
    Gelu(usize),
    Mish(usize),
    Swish(usize),
    AconC { x: usize, p1: usize, p2: usize, beta: usize },
    Reshape(usize),
}

struct Node<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires: bool,
    op: Op,
}

/// Wengert list for one forward pass. Operations are appended in execution
/// order, so the list is already topologically sorted; `backward` walks it in
/// strict reverse.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), check_finite: true }
    }

    /// Disables the per-op NaN/Inf scan (benchmark mode).
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    /// Registers a tensor as a leaf. Gradients flow back to it iff the source
    /// tensor has `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape.to_vec(), t.data.clone(), t.requires_grad, Op::Leaf)
    }

    /// Leaf from raw parts, without gradient tracking.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Gradient of the last `backward` target w.r.t. `v`, if one was computed.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].data[0]
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, requires: bool, op: Op) -> Var {
        self.nodes.push(Node { shape, data, grad: None, requires, op });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, i: usize) -> bool {
        self.nodes[i].requires
    }

    fn check(&self, data: &[T], op: &str) -> Result<()> {
        if self.check_finite && data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value in output of {op}")));
        }
        Ok(())
    }

    fn dims2(&self, v: Var, op: &str) -> Result<(usize, usize)> {
        match self.nodes[v.0].shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Dimension(format!("{op}: expected rank 2, got {other:?}"))),
        }
    }

    // ── Forward ops ──────────────────────────────────────────────────

    /// Elementwise sum of two same-shape values.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Dimension(format!(
                "add: shape {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| *x + *y)
            .collect();
        self.check(&data, "add")?;
        let shape = self.nodes[a.0].shape.clone();
        let req = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(shape, data, req, Op::Add(a.0, b.0)))
    }

    /// Elementwise product of two same-shape values.
    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Dimension(format!(
                "mul_elem: shape {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| *x * *y)
            .collect();
        self.check(&data, "mul_elem")?;
        let shape = self.nodes[a.0].shape.clone();
        let req = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(shape, data, req, Op::MulElem(a.0, b.0)))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total: f64 = self.nodes[a.0].data.iter().map(|v| v.as_f64()).sum();
        let data = vec![T::from_f64(total)];
        self.check(&data, "sum")?;
        let req = self.requires(a.0);
        Ok(self.push(vec![1], data, req, Op::Sum(a.0)))
    }

    /// `x[n,d_in] . w[d_in,d_out] + b[d_out]`, row-major, f64 inner products.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, d_in) = self.dims2(x, "linear")?;
        let (wk, d_out) = self.dims2(w, "linear")?;
        if wk != d_in {
            return Err(Error::Dimension(format!(
                "linear: x is {n}x{d_in} but w is {wk}x{d_out}"
            )));
        }
        if self.nodes[b.0].shape != [d_out] {
            return Err(Error::Dimension(format!(
                "linear: bias shape {:?}, want [{d_out}]",
                self.nodes[b.0].shape
            )));
        }
        let mut out = matmul(&self.nodes[x.0].data, &self.nodes[w.0].data, n, d_in, d_out);
        let bias = &self.nodes[b.0].data;
        for i in 0..n {
            for j in 0..d_out {
                out[i * d_out + j] += bias[j];
            }
        }
        self.check(&out, "linear")?;
        let req = self.requires(x.0) || self.requires(w.0) || self.requires(b.0);
        Ok(self.push(vec![n, d_out], out, req, Op::Linear { x: x.0, w: w.0, b: b.0 }))
    }

    /// Per-row normalization with population variance (denominator `d`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.dims2(x, "layer_norm")?;
        if d == 0 {
            return Err(Error::Dimension("layer_norm: zero-width rows".into()));
        }
        if eps <= 0.0 {
            return Err(Error::Input(format!("layer_norm: eps must be > 0, got {eps}")));
        }
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.nodes[v.0].shape != [d] {
                return Err(Error::Dimension(format!(
                    "layer_norm: {name} shape {:?}, want [{d}]",
                    self.nodes[v.0].shape
                )));
            }
        }
        let mut out = vec![T::zero(); n * d];
        let xs = &self.nodes[x.0].data;
        let gs = &self.nodes[gamma.0].data;
        let bs = &self.nodes[beta.0].data;
        for i in 0..n {
            let row = &xs[i * d..(i + 1) * d];
            let (mean, var) = row_moments(row);
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                let xhat = (row[j].as_f64() - mean) * inv_std;
                out[i * d + j] = T::from_f64(xhat * gs[j].as_f64() + bs[j].as_f64());
            }
        }
        self.check(&out, "layer_norm")?;
        let req = self.requires(x.0) || self.requires(gamma.0) || self.requires(beta.0);
        Ok(self.push(vec![n, d], out, req, Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, eps }))
    }

    /// 2-D transpose. The gradient of a transpose is a transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.dims2(x, "transpose2d")?;
        let xs = &self.nodes[x.0].data;
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = xs[i * m + j];
            }
        }
        let req = self.requires(x.0);
        Ok(self.push(vec![m, n], out, req, Op::Transpose(x.0)))
    }

    /// Column means: `[n,d] -> [d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims2(x, "mean_rows")?;
        let xs = &self.nodes[x.0].data;
        let mut acc = vec![0f64; d];
        for i in 0..n {
            for j in 0..d {
                acc[j] += xs[i * d + j].as_f64();
            }
        }
        let out: Vec<T> = acc.iter().map(|&s| T::from_f64(s / n as f64)).collect();
        self.check(&out, "mean_rows")?;
        let req = self.requires(x.0);
        Ok(self.push(vec![d], out, req, Op::MeanRows(x.0)))
    }

    /// Mean over rows of `-log softmax(row)[label]`, with max-subtraction.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.dims2(logits, "cross_entropy")?;
        if labels.len() != n {
            return Err(Error::Input(format!(
                "cross_entropy: {n} rows but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Input(format!(
                "cross_entropy: label {bad} out of range for {c} classes"
            )));
        }
        let xs = &self.nodes[logits.0].data;
        let mut total = 0f64;
        for (i, &label) in labels.iter().enumerate() {
            let row = &xs[i * c..(i + 1) * c];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let lse: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
            total -= row[label].as_f64() - max - lse.ln();
        }
        let data = vec![T::from_f64(total / n as f64)];
        self.check(&data, "cross_entropy")?;
        let req = self.requires(logits.0);
        Ok(self.push(vec![1], data, req, Op::CrossEntropy { logits: logits.0, labels: labels.to_vec() }))
    }

    /// Exact-erf GELU, elementwise on any shape.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "gelu", activations::gelu, Op::Gelu(x.0))
    }

    /// Mish with a stable softplus, elementwise on any shape.
    pub fn mish(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "mish", activations::mish, Op::Mish(x.0))
    }

    /// Swish (sigmoid-weighted identity), elementwise on any shape.
    pub fn swish(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "swish", activations::swish, Op::Swish(x.0))
    }

    fn unary(&mut self, x: Var, name: &str, f: fn(f64) -> f64, op: Op) -> Result<Var> {
        let data: Vec<T> = self.nodes[x.0].data.iter().map(|v| T::from_f64(f(v.as_f64()))).collect();
        self.check(&data, name)?;
        let shape = self.nodes[x.0].shape.clone();
        let req = self.requires(x.0);
        Ok(self.push(shape, data, req, op))
    }

    /// Reinterprets the value under a new shape with the same element count.
    pub fn reshape(&mut self, x: Var, new_shape: Vec<usize>) -> Result<Var> {
        let numel: usize = new_shape.iter().product();
        if numel != self.nodes[x.0].data.len() {
            return Err(Error::Dimension(format!(
                "reshape: {:?} has {} elements, target {new_shape:?} wants {numel}",
                self.nodes[x.0].shape,
                self.nodes[x.0].data.len()
            )));
        }
        let data = self.nodes[x.0].data.clone();
        let req = self.requires(x.0);
        Ok(self.push(new_shape, data, req, Op::Reshape(x.0)))
    }

    /// Acon-C over `x[n,d]` with per-channel `p1`, `p2`, `beta` of length `d`.
    /// All three parameter vectors participate in backward.
    pub fn aconc(&mut self, x: Var, p1: Var, p2: Var, beta: Var) -> Result<Var> {
        let (n, d) = self.dims2(x, "aconc")?;
        for (name, v) in [("p1", p1), ("p2", p2), ("beta", beta)] {
            if self.nodes[v.0].shape != [d] {
                return Err(Error::Dimension(format!(
                    "aconc: {name} shape {:?}, want [{d}]",
                    self.nodes[v.0].shape
                )));
            }
        }
        let xs = &self.nodes[x.0].data;
        let p1s = &self.nodes[p1.0].data;
        let p2s = &self.nodes[p2.0].data;
        let bs = &self.nodes[beta.0].data;
        let mut out = vec![T::zero(); n * d];
        for i in 0..n {
            for j in 0..d {
                let v = activations::aconc(
                    xs[i * d + j].as_f64(),
                    p1s[j].as_f64(),
                    p2s[j].as_f64(),
                    bs[j].as_f64(),
                );
                out[i * d + j] = T::from_f64(v);
            }
        }
        self.check(&out, "aconc")?;
        let req = self.requires(x.0)
            || self.requires(p1.0)
            || self.requires(p2.0)
            || self.requires(beta.0);
        Ok(self.push(vec![n, d], out, req, Op::AconC { x: x.0, p1: p1.0, p2: p2.0, beta: beta.0 }))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Seeds `d loss = 1` and walks the tape in reverse, accumulating
    /// gradients into every node that transitively depends on a
    /// gradient-tracked leaf. Multiple uses of a value sum additively.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if !self.nodes[loss.0].requires {
            return Ok(()); // nothing tracked below the loss
        }
        for node in &mut self.nodes {
            node.grad = if node.requires { Some(vec![T::zero(); node.data.len()]) } else { None };
        }
        self.nodes[loss.0].grad.as_mut().unwrap()[0] = T::one();

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let g = self.nodes[i].grad.clone().unwrap();
                    self.add_into(a, &g);
                    self.add_into(b, &g);
                }
                Op::MulElem(a, b) => {
                    let g = self.nodes[i].grad.clone().unwrap();
                    if self.requires(a) {
                        let da: Vec<T> =
                            g.iter().zip(&self.nodes[b].data).map(|(g, v)| *g * *v).collect();
                        self.add_into(a, &da);
                    }
                    if self.requires(b) {
                        let db: Vec<T> =
                            g.iter().zip(&self.nodes[a].data).map(|(g, v)| *g * *v).collect();
                        self.add_into(b, &db);
                    }
                }
                Op::Sum(a) => {
                    let g = self.nodes[i].grad.as_ref().unwrap()[0];
                    let da = vec![g; self.nodes[a].data.len()];
                    self.add_into(a, &da);
                }
                Op::Linear { x, w, b } => self.backward_linear(i, x, w, b),
                Op::LayerNorm { x, gamma, beta, eps } => {
                    self.backward_layer_norm(i, x, gamma, beta, eps)
                }
                Op::Transpose(a) => {
                    let g = self.nodes[i].grad.clone().unwrap();
                    let (m, n) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let mut da = vec![T::zero(); g.len()];
                    for r in 0..m {
                        for c in 0..n {
                            da[c * m + r] = g[r * n + c];
                        }
                    }
                    self.add_into(a, &da);
                }
                Op::MeanRows(a) => {
                    let g = self.nodes[i].grad.clone().unwrap();
                    let n = self.nodes[a].shape[0];
                    let d = self.nodes[a].shape[1];
                    let scale = T::from_f64(1.0 / n as f64);
                    let mut da = vec![T::zero(); n * d];
                    for r in 0..n {
                        for c in 0..d {
                            da[r * d + c] = g[c] * scale;
                        }
                    }
                    self.add_into(a, &da);
                }
                Op::CrossEntropy { logits, labels } => {
                    let g = self.nodes[i].grad.as_ref().unwrap()[0].as_f64();
                    let (n, c) = (self.nodes[logits].shape[0], self.nodes[logits].shape[1]);
                    let xs = &self.nodes[logits].data;
                    let mut da = vec![T::zero(); n * c];
                    for (r, &label) in labels.iter().enumerate() {
                        let row = &xs[r * c..(r + 1) * c];
                        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
                        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
                        let denom: f64 = exps.iter().sum();
                        for k in 0..c {
                            let softmax = exps[k] / denom;
                            let target = if k == label { 1.0 } else { 0.0 };
                            da[r * c + k] = T::from_f64(g * (softmax - target) / n as f64);
                        }
                    }
                    self.add_into(logits, &da);
                }
                Op::Gelu(a) => self.backward_unary(i, a, activations::gelu_grad),
                Op::Mish(a) => self.backward_unary(i, a, activations::mish_grad),
                Op::Swish(a) => self.backward_unary(i, a, activations::swish_grad),
                Op::AconC { x, p1, p2, beta } => self.backward_aconc(i, x, p1, p2, beta),
                Op::Reshape(a) => {
                    let g = self.nodes[i].grad.clone().unwrap();
                    self.add_into(a, &g);
                }
            }
        }

        if self.check_finite {
            for node in &self.nodes {
                if let Some(g) = &node.grad {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numeric("non-finite gradient".into()));
                    }
                }
            }
        }
        Ok(())
    }

    fn add_into(&mut self, target: usize, g: &[T]) {
        if !self.requires(target) {
            return;
        }
        let grad = self.nodes[target].grad.as_mut().unwrap();
        for (a, b) in grad.iter_mut().zip(g) {
            *a += *b;
        }
    }

    fn backward_unary(&mut self, i: usize, a: usize, df: fn(f64) -> f64) {
        let g = self.nodes[i].grad.clone().unwrap();
        let da: Vec<T> = g
            .iter()
            .zip(&self.nodes[a].data)
            .map(|(g, x)| T::from_f64(g.as_f64() * df(x.as_f64())))
            .collect();
        self.add_into(a, &da);
    }

    fn backward_linear(&mut self, i: usize, x: usize, w: usize, b: usize) {
        let g = self.nodes[i].grad.clone().unwrap();
        let (n, d_out) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
        let d_in = self.nodes[w].shape[0];
        if self.requires(x) {
            // dX = dY . W^T
            let ws = &self.nodes[w].data;
            let mut dx = vec![T::zero(); n * d_in];
            for r in 0..n {
                for p in 0..d_in {
                    let mut acc = 0f64;
                    for j in 0..d_out {
                        acc += g[r * d_out + j].as_f64() * ws[p * d_out + j].as_f64();
                    }
                    dx[r * d_in + p] = T::from_f64(acc);
                }
            }
            self.add_into(x, &dx);
        }
        if self.requires(w) {
            // dW = X^T . dY
            let xs = &self.nodes[x].data;
            let mut acc = vec![0f64; d_in * d_out];
            for r in 0..n {
                for p in 0..d_in {
                    let xv = xs[r * d_in + p].as_f64();
                    for j in 0..d_out {
                        acc[p * d_out + j] += xv * g[r * d_out + j].as_f64();
                    }
                }
            }
            let dw: Vec<T> = acc.iter().map(|&v| T::from_f64(v)).collect();
            self.add_into(w, &dw);
        }
        if self.requires(b) {
            let mut acc = vec![0f64; d_out];
            for r in 0..n {
                for j in 0..d_out {
                    acc[j] += g[r * d_out + j].as_f64();
                }
            }
            let db: Vec<T> = acc.iter().map(|&v| T::from_f64(v)).collect();
            self.add_into(b, &db);
        }
    }

    fn backward_layer_norm(&mut self, i: usize, x: usize, gamma: usize, beta: usize, eps: f64) {
        let g = self.nodes[i].grad.clone().unwrap();
        let (n, d) = (self.nodes[x].shape[0], self.nodes[x].shape[1]);
        let xs = &self.nodes[x].data;
        let gs = &self.nodes[gamma].data;
        let mut dx = vec![T::zero(); n * d];
        let mut dgamma = vec![0f64; d];
        let mut dbeta = vec![0f64; d];
        let df = d as f64;
        for r in 0..n {
            let row = &xs[r * d..(r + 1) * d];
            let grow = &g[r * d..(r + 1) * d];
            let (mean, var) = row_moments(row);
            let inv_std = 1.0 / (var + eps).sqrt();
            let xhat: Vec<f64> = row.iter().map(|v| (v.as_f64() - mean) * inv_std).collect();
            let mut dxhat = vec![0f64; d];
            let mut sum_dxhat = 0f64;
            let mut sum_dxhat_xhat = 0f64;
            for j in 0..d {
                let gj = grow[j].as_f64();
                dgamma[j] += gj * xhat[j];
                dbeta[j] += gj;
                dxhat[j] = gj * gs[j].as_f64();
                sum_dxhat += dxhat[j];
                sum_dxhat_xhat += dxhat[j] * xhat[j];
            }
            for j in 0..d {
                let v = inv_std / df * (df * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                dx[r * d + j] = T::from_f64(v);
            }
        }
        self.add_into(x, &dx);
        let dgamma: Vec<T> = dgamma.iter().map(|&v| T::from_f64(v)).collect();
        self.add_into(gamma, &dgamma);
        let dbeta: Vec<T> = dbeta.iter().map(|&v| T::from_f64(v)).collect();
        self.add_into(beta, &dbeta);
    }

    fn backward_aconc(&mut self, i: usize, x: usize, p1: usize, p2: usize, beta: usize) {
        let g = self.nodes[i].grad.clone().unwrap();
        let (n, d) = (self.nodes[x].shape[0], self.nodes[x].shape[1]);
        let xs = &self.nodes[x].data;
        let p1s = &self.nodes[p1].data;
        let p2s = &self.nodes[p2].data;
        let bs = &self.nodes[beta].data;
        let mut dx = vec![T::zero(); n * d];
        let mut dp1 = vec![0f64; d];
        let mut dp2 = vec![0f64; d];
        let mut dbeta = vec![0f64; d];
        for r in 0..n {
            for j in 0..d {
                let gv = g[r * d + j].as_f64();
                let grads = activations::aconc_grads(
                    xs[r * d + j].as_f64(),
                    p1s[j].as_f64(),
                    p2s[j].as_f64(),
                    bs[j].as_f64(),
                );
                dx[r * d + j] = T::from_f64(gv * grads.x);
                dp1[j] += gv * grads.p1;
                dp2[j] += gv * grads.p2;
                dbeta[j] += gv * grads.beta;
            }
        }
        self.add_into(x, &dx);
        let dp1: Vec<T> = dp1.iter().map(|&v| T::from_f64(v)).collect();
        self.add_into(p1, &dp1);
        let dp2: Vec<T> = dp2.iter().map(|&v| T::from_f64(v)).collect();
        self.add_into(p2, &dp2);
        let dbeta: Vec<T> = dbeta.iter().map(|&v| T::from_f64(v)).collect();
        self.add_into(beta, &dbeta);
    }
}

/// Row-major matmul `a[m,k] . b[k,n]` with f64 accumulators.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    let mut acc = vec![0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..k {
            let av = a[i * k + p].as_f64();
            let brow = &b[p * n..(p + 1) * n];
            for (j, bv) in brow.iter().enumerate() {
                acc[j] += av * bv.as_f64();
            }
        }
        for j in 0..n {
            out[i * n + j] = T::from_f64(acc[j]);
        }
    }
    out
}

/// Mean and population variance of a row, accumulated in f64.
fn row_moments<T: Real>(row: &[T]) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / d;
    let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / d;
    (mean, var)
}
