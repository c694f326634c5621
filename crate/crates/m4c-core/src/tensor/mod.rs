//! Dense f64 tensors and a tape-based reverse-mode autodiff engine.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks the recording in reverse and accumulates gradients into every node
//! that requires them. Parameters are borrowed into the tape (no copy), so a
//! fresh tape per forward pass is cheap.
//!
//! Values are 64-bit floats throughout: the models here are desk-scale and
//! f64 keeps the finite-difference checks tight.

mod kernels;

pub(crate) use kernels::{gelu, gelu_deriv, sigmoid};
use kernels::{bce_with_logits, layer_norm_stats, matmul_acc, matmul_nt_acc, matmul_tn_acc, softmax_row};

use crate::error::{Error, Result};

/// Dense n-dimensional array of f64, row-major, with an optional gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Validation(format!(
                "tensor shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

enum Storage<'a> {
    Owned(Vec<f64>),
    Borrowed(&'a [f64]),
}

impl Storage<'_> {
    fn as_slice(&self) -> &[f64] {
        match self {
            Storage::Owned(v) => v,
            Storage::Borrowed(s) => s,
        }
    }
}

enum Op {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    AddBias { a: TensorId, bias: TensorId },
    Mul { a: TensorId, b: TensorId },
    Scale { a: TensorId, factor: f64 },
    Softmax { a: TensorId, axis: usize },
    LayerNorm { x: TensorId, gamma: TensorId, beta: TensorId, eps: f64 },
    Gelu { a: TensorId },
    Transpose { a: TensorId },
    ConcatRows { parts: Vec<TensorId> },
    SliceRows { a: TensorId, start: usize },
    ConcatCols { parts: Vec<TensorId> },
    SliceCols { a: TensorId, start: usize },
    GatherRows { a: TensorId, indices: Vec<usize> },
    View { a: TensorId },
    SumAll { a: TensorId },
    MeanAll { a: TensorId },
    BceWithLogitsMasked { logits: TensorId, targets: TensorId, mask: TensorId },
}

struct Node<'a> {
    shape: Vec<usize>,
    data: Storage<'a>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Records one forward pass and replays it in reverse for gradients.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            shape,
            data: Storage::Owned(data),
            grad: None,
            requires_grad,
            op,
        });
        id
    }

    /// Borrow a parameter tensor into the tape as a differentiable leaf.
    pub fn param(&mut self, t: &'a Tensor) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            shape: t.shape.clone(),
            data: Storage::Borrowed(&t.data),
            grad: None,
            requires_grad: t.requires_grad,
            op: Op::Leaf,
        });
        id
    }

    /// Borrow a read-only slice as a constant leaf.
    pub fn constant(&mut self, data: &'a [f64], shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Validation(format!(
                "constant shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            shape,
            data: Storage::Borrowed(data),
            grad: None,
            requires_grad: false,
            op: Op::Leaf,
        });
        Ok(id)
    }

    /// Owned leaf, differentiable on request (used by tests and gradient checks).
    pub fn leaf(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Validation(format!(
                "leaf shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(self.push(shape, data, requires_grad, Op::Leaf))
    }

    /// All-zero constant of the given 2-D shape.
    pub fn zeros(&mut self, rows: usize, cols: usize) -> TensorId {
        self.push(vec![rows, cols], vec![0.0; rows * cols], false, Op::Leaf)
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].data.as_slice()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn rg(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn dims2(&self, id: TensorId, op: &'static str) -> Result<(usize, usize)> {
        let s = &self.nodes[id.0].shape;
        if s.len() != 2 {
            return Err(Error::Dimension {
                op,
                lhs: s.clone(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    // ── forward ops ─────────────────────────────────────────────────────

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.data(a), self.data(b), m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, rg, Op::MatMul { a, b }))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Dimension {
                op: "add",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, out, rg, Op::Add { a, b }))
    }

    /// Add a length-c bias vector to every row of a [r, c] tensor.
    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (r, c) = self.dims2(a, "add_bias")?;
        if self.nodes[bias.0].shape != [c] {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[bias.0].shape.clone(),
            });
        }
        let bias_data = self.data(bias);
        let mut out = self.data(a).to_vec();
        for row in out.chunks_exact_mut(c) {
            for (o, &bv) in row.iter_mut().zip(bias_data) {
                *o += bv;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(vec![r, c], out, rg, Op::AddBias { a, bias }))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Dimension {
                op: "mul",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, out, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: TensorId, factor: f64) -> TensorId {
        let out: Vec<f64> = self.data(a).iter().map(|x| x * factor).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a);
        self.push(shape, out, rg, Op::Scale { a, factor })
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.nodes[a.0].shape.clone();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::Dimension {
                op: "softmax",
                lhs: shape,
                rhs: vec![axis],
            });
        }
        let lane = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.data(a);
        let mut out = vec![0.0; x.len()];
        if inner == 1 {
            for (src, dst) in x.chunks_exact(lane).zip(out.chunks_exact_mut(lane)) {
                softmax_row(src, dst);
            }
        } else {
            let mut buf = vec![0.0; lane];
            let mut res = vec![0.0; lane];
            for o in 0..outer {
                for i in 0..inner {
                    for l in 0..lane {
                        buf[l] = x[(o * lane + l) * inner + i];
                    }
                    softmax_row(&buf, &mut res);
                    for l in 0..lane {
                        out[(o * lane + l) * inner + i] = res[l];
                    }
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(shape, out, rg, Op::Softmax { a, axis }))
    }

    /// Layer normalization over the last dimension, then affine gamma/beta.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let shape = self.nodes[x.0].shape.clone();
        let d = *shape.last().ok_or(Error::Dimension {
            op: "layer_norm",
            lhs: shape.clone(),
            rhs: vec![],
        })?;
        if self.nodes[gamma.0].shape != [d] || self.nodes[beta.0].shape != [d] {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: shape,
                rhs: self.nodes[gamma.0].shape.clone(),
            });
        }
        let xd = self.data(x);
        let g = self.data(gamma);
        let b = self.data(beta);
        let mut out = vec![0.0; xd.len()];
        for (row, orow) in xd.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let (mean, inv) = layer_norm_stats(row, eps);
            for j in 0..d {
                orow[j] = (row[j] - mean) * inv * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(shape, out, rg, Op::LayerNorm { x, gamma, beta, eps }))
    }

    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        let out: Vec<f64> = self.data(a).iter().map(|&x| gelu(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a);
        self.push(shape, out, rg, Op::Gelu { a })
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.dims2(a, "transpose")?;
        let x = self.data(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![c, r], out, rg, Op::Transpose { a }))
    }

    /// Stack 2-D parts with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Internal("concat_rows of zero parts".into()));
        }
        let (_, c) = self.dims2(parts[0], "concat_rows")?;
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_rows")?;
            if pc != c {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.nodes[parts[0].0].shape.clone(),
                    rhs: self.nodes[p.0].shape.clone(),
                });
            }
            rows += pr;
        }
        let mut out = Vec::with_capacity(rows * c);
        for &p in parts {
            out.extend_from_slice(self.data(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            vec![rows, c],
            out,
            rg,
            Op::ConcatRows { parts: parts.to_vec() },
        ))
    }

    pub fn slice_rows(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (r, c) = self.dims2(a, "slice_rows")?;
        if start + len > r {
            return Err(Error::Dimension {
                op: "slice_rows",
                lhs: vec![r, c],
                rhs: vec![start, len],
            });
        }
        let out = self.data(a)[start * c..(start + len) * c].to_vec();
        let rg = self.rg(a);
        Ok(self.push(vec![len, c], out, rg, Op::SliceRows { a, start }))
    }

    /// Stack 2-D parts with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Internal("concat_cols of zero parts".into()));
        }
        let (r, _) = self.dims2(parts[0], "concat_cols")?;
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_cols")?;
            if pr != r {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.nodes[parts[0].0].shape.clone(),
                    rhs: self.nodes[p.0].shape.clone(),
                });
            }
            cols += pc;
        }
        let mut out = vec![0.0; r * cols];
        let mut offset = 0;
        for &p in parts {
            let (_, pc) = self.dims2(p, "concat_cols")?;
            let src = self.data(p);
            for i in 0..r {
                out[i * cols + offset..i * cols + offset + pc]
                    .copy_from_slice(&src[i * pc..(i + 1) * pc]);
            }
            offset += pc;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            vec![r, cols],
            out,
            rg,
            Op::ConcatCols { parts: parts.to_vec() },
        ))
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (r, c) = self.dims2(a, "slice_cols")?;
        if start + len > c {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: vec![r, c],
                rhs: vec![start, len],
            });
        }
        let src = self.data(a);
        let mut out = vec![0.0; r * len];
        for i in 0..r {
            out[i * len..(i + 1) * len].copy_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(vec![r, len], out, rg, Op::SliceCols { a, start }))
    }

    /// Select rows of `a` by index (embedding lookup). Indices may repeat.
    pub fn gather_rows(&mut self, a: TensorId, indices: &[usize]) -> Result<TensorId> {
        let (r, c) = self.dims2(a, "gather_rows")?;
        let src = self.data(a);
        let mut out = Vec::with_capacity(indices.len() * c);
        for &idx in indices {
            if idx >= r {
                return Err(Error::Validation(format!(
                    "gather_rows index {idx} out of range for {r} rows"
                )));
            }
            out.extend_from_slice(&src[idx * c..(idx + 1) * c]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            vec![indices.len(), c],
            out,
            rg,
            Op::GatherRows { a, indices: indices.to_vec() },
        ))
    }

    /// Reinterpret the data under a new shape with the same element count.
    pub fn view(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.data(a).len() {
            return Err(Error::Dimension {
                op: "view",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: shape,
            });
        }
        let out = self.data(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape, out, rg, Op::View { a }))
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.data(a).iter().sum();
        let rg = self.rg(a);
        self.push(vec![1], vec![s], rg, Op::SumAll { a })
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let d = self.data(a);
        let s: f64 = d.iter().sum::<f64>() / d.len().max(1) as f64;
        let rg = self.rg(a);
        self.push(vec![1], vec![s], rg, Op::MeanAll { a })
    }

    /// Mean over mask=1 cells of the stable elementwise binary cross-entropy
    /// with logits; a fully masked input yields 0. Targets must be exactly
    /// 0 or 1; mask cells must be exactly 0 or 1. Cells with mask 0 are never
    /// evaluated, so sentinel logits there are harmless.
    pub fn sigmoid_bce_with_logits(
        &mut self,
        logits: TensorId,
        targets: TensorId,
        mask: TensorId,
    ) -> Result<TensorId> {
        let shape = self.nodes[logits.0].shape.clone();
        if self.nodes[targets.0].shape != shape {
            return Err(Error::Dimension {
                op: "sigmoid_bce_with_logits",
                lhs: shape,
                rhs: self.nodes[targets.0].shape.clone(),
            });
        }
        if self.nodes[mask.0].shape != shape {
            return Err(Error::Dimension {
                op: "sigmoid_bce_with_logits",
                lhs: shape,
                rhs: self.nodes[mask.0].shape.clone(),
            });
        }
        let x = self.data(logits);
        let t = self.data(targets);
        let m = self.data(mask);
        let mut count = 0.0;
        let mut total = 0.0;
        for i in 0..x.len() {
            if m[i] != 0.0 && m[i] != 1.0 {
                return Err(Error::Validation(format!(
                    "loss mask value {} is not in {{0,1}}",
                    m[i]
                )));
            }
            if t[i] != 0.0 && t[i] != 1.0 {
                return Err(Error::Validation(format!(
                    "target value {} is not in {{0,1}}",
                    t[i]
                )));
            }
            if m[i] == 1.0 {
                count += 1.0;
                total += bce_with_logits(x[i], t[i]);
            }
        }
        let loss = if count > 0.0 { total / count } else { 0.0 };
        let rg = self.rg(logits);
        Ok(self.push(
            vec![1],
            vec![loss],
            rg,
            Op::BceWithLogitsMasked { logits, targets, mask },
        ))
    }

    // ── backward ────────────────────────────────────────────────────────

    fn acc_grad(&mut self, id: TensorId, delta: &[f64]) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        let len = node.data.as_slice().len();
        let g = node.grad.get_or_insert_with(|| vec![0.0; len]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    /// Reverse pass seeding d(loss)/d(loss) = 1. `loss` must be scalar.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].data.as_slice().len() != 1 {
            return Err(Error::Internal(
                "backward requires a scalar loss node".into(),
            ));
        }
        {
            let node = &mut self.nodes[loss.0];
            let g = node.grad.get_or_insert_with(|| vec![0.0; 1]);
            g[0] += 1.0;
        }
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            self.step_backward(i, &g)?;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn step_backward(&mut self, i: usize, g: &[f64]) -> Result<()> {
        // Ops are matched by value-copied metadata so that `self` stays
        // borrowable for the accumulation calls.
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b } => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                if self.rg(a) {
                    let mut da = vec![0.0; m * k];
                    matmul_nt_acc(g, self.data(b), m, n, k, &mut da);
                    self.acc_grad(a, &da);
                }
                if self.rg(b) {
                    let mut db = vec![0.0; k * n];
                    matmul_tn_acc(self.data(a), g, m, k, n, &mut db);
                    self.acc_grad(b, &db);
                }
            }
            &Op::Add { a, b } => {
                self.acc_grad(a, g);
                self.acc_grad(b, g);
            }
            &Op::AddBias { a, bias } => {
                self.acc_grad(a, g);
                if self.rg(bias) {
                    let c = self.nodes[bias.0].shape[0];
                    let mut db = vec![0.0; c];
                    for row in g.chunks_exact(c) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                    self.acc_grad(bias, &db);
                }
            }
            &Op::Mul { a, b } => {
                if self.rg(a) {
                    let da: Vec<f64> = g.iter().zip(self.data(b)).map(|(gv, bv)| gv * bv).collect();
                    self.acc_grad(a, &da);
                }
                if self.rg(b) {
                    let db: Vec<f64> = g.iter().zip(self.data(a)).map(|(gv, av)| gv * av).collect();
                    self.acc_grad(b, &db);
                }
            }
            &Op::Scale { a, factor } => {
                let da: Vec<f64> = g.iter().map(|gv| gv * factor).collect();
                self.acc_grad(a, &da);
            }
            &Op::Softmax { a, axis } => {
                let shape = &self.nodes[i].shape;
                let lane = shape[axis];
                let outer: usize = shape[..axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let y = self.nodes[i].data.as_slice();
                let mut da = vec![0.0; y.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |l: usize| (o * lane + l) * inner + ii;
                        let mut dot = 0.0;
                        for l in 0..lane {
                            dot += g[at(l)] * y[at(l)];
                        }
                        for l in 0..lane {
                            da[at(l)] = y[at(l)] * (g[at(l)] - dot);
                        }
                    }
                }
                self.acc_grad(a, &da);
            }
            &Op::LayerNorm { x, gamma, beta, eps } => {
                let d = *self.nodes[i].shape.last().unwrap();
                let xd = self.data(x);
                let gm = self.data(gamma);
                let n = xd.len();
                let mut dx = vec![0.0; n];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for (r, (row, grow)) in xd.chunks_exact(d).zip(g.chunks_exact(d)).enumerate() {
                    let (mean, inv) = layer_norm_stats(row, eps);
                    let dd = d as f64;
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..d {
                        let xhat = (row[j] - mean) * inv;
                        let dxhat = grow[j] * gm[j];
                        dgamma[j] += grow[j] * xhat;
                        dbeta[j] += grow[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    for j in 0..d {
                        let xhat = (row[j] - mean) * inv;
                        let dxhat = grow[j] * gm[j];
                        dx[r * d + j] =
                            inv * (dxhat - sum_dxhat / dd - xhat * sum_dxhat_xhat / dd);
                    }
                }
                self.acc_grad(x, &dx);
                self.acc_grad(gamma, &dgamma);
                self.acc_grad(beta, &dbeta);
            }
            &Op::Gelu { a } => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.data(a))
                    .map(|(gv, &x)| gv * gelu_deriv(x))
                    .collect();
                self.acc_grad(a, &da);
            }
            &Op::Transpose { a } => {
                let (r, c) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let mut da = vec![0.0; r * c];
                for i2 in 0..c {
                    for j in 0..r {
                        da[j * c + i2] = g[i2 * r + j];
                    }
                }
                self.acc_grad(a, &da);
            }
            Op::ConcatRows { parts } => {
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let (pr, pc) = (self.nodes[p.0].shape[0], self.nodes[p.0].shape[1]);
                    let seg = g[offset..offset + pr * pc].to_vec();
                    self.acc_grad(p, &seg);
                    offset += pr * pc;
                }
            }
            &Op::SliceRows { a, start } => {
                let (r, c) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let mut da = vec![0.0; r * c];
                da[start * c..start * c + g.len()].copy_from_slice(g);
                self.acc_grad(a, &da);
            }
            Op::ConcatCols { parts } => {
                let parts = parts.clone();
                let r = self.nodes[i].shape[0];
                let cols = self.nodes[i].shape[1];
                let mut offset = 0;
                for p in parts {
                    let pc = self.nodes[p.0].shape[1];
                    let mut seg = vec![0.0; r * pc];
                    for row in 0..r {
                        seg[row * pc..(row + 1) * pc]
                            .copy_from_slice(&g[row * cols + offset..row * cols + offset + pc]);
                    }
                    self.acc_grad(p, &seg);
                    offset += pc;
                }
            }
            &Op::SliceCols { a, start } => {
                let (r, c) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let len = self.nodes[i].shape[1];
                let mut da = vec![0.0; r * c];
                for row in 0..r {
                    da[row * c + start..row * c + start + len]
                        .copy_from_slice(&g[row * len..(row + 1) * len]);
                }
                self.acc_grad(a, &da);
            }
            Op::GatherRows { a, indices } => {
                let a = *a;
                let indices = indices.clone();
                let (r, c) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let mut da = vec![0.0; r * c];
                for (out_row, &idx) in indices.iter().enumerate() {
                    for j in 0..c {
                        da[idx * c + j] += g[out_row * c + j];
                    }
                }
                self.acc_grad(a, &da);
            }
            &Op::View { a } => {
                self.acc_grad(a, g);
            }
            &Op::SumAll { a } => {
                let n = self.nodes[a.0].data.as_slice().len();
                let da = vec![g[0]; n];
                self.acc_grad(a, &da);
            }
            &Op::MeanAll { a } => {
                let n = self.nodes[a.0].data.as_slice().len();
                let da = vec![g[0] / n as f64; n];
                self.acc_grad(a, &da);
            }
            &Op::BceWithLogitsMasked { logits, targets, mask } => {
                if self.rg(logits) {
                    let x = self.data(logits);
                    let t = self.data(targets);
                    let m = self.data(mask);
                    let count: f64 = m.iter().sum();
                    let mut da = vec![0.0; x.len()];
                    if count > 0.0 {
                        for j in 0..x.len() {
                            if m[j] == 1.0 {
                                da[j] = g[0] * (sigmoid(x[j]) - t[j]) / count;
                            }
                        }
                    }
                    self.acc_grad(logits, &da);
                }
            }
        }
        Ok(())
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}
