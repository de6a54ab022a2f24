//! Reverse-mode autodiff over an append-only operation graph.
//!
//! Nodes are appended in execution order, which is therefore a valid
//! topological order; `backward` walks the list in exact reverse insertion
//! order. Forward values are computed eagerly when an op is inserted and are
//! immutable afterwards.

use std::rc::Rc;

use super::kernels::gemm;
use super::tensor::{Tensor, TensorRef};
use super::NumericsError;

/// Fill value for masked attention scores. Finite, so forward outputs stay
/// finite; exp(MASK_FILL - max) underflows to exactly 0.
pub const MASK_FILL: f64 = -1.0e30;

const GELU_C: f64 = 0.044_715;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Matmul,
    Transpose,
    Add,
    Mul,
    Scale(f64),
    /// x[m×n] + row[n], broadcast over rows.
    AddRow,
    Gelu {
        tanh_cache: Vec<f64>,
    },
    SoftmaxRows,
    LayerNorm {
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    CausalMask,
    GatherRows {
        indices: Vec<usize>,
    },
    ConcatRows {
        offsets: Vec<usize>,
    },
    SliceCols {
        start: usize,
        len: usize,
    },
    ConcatCols {
        offsets: Vec<usize>,
    },
    Sum,
    CrossEntropyMasked {
        targets: Vec<u32>,
        /// Softmax probabilities of masked rows, in `masked_rows` order.
        probs: Vec<f64>,
        masked_rows: Vec<usize>,
    },
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    out: TensorRef,
    needs_grad: bool,
}

/// Append-only computation graph. Confined to one thread of execution.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a shared tensor as a leaf. Gradients accumulate into the
    /// tensor itself when it has `requires_grad`.
    pub fn leaf(&mut self, tensor: TensorRef) -> Var {
        let needs = tensor.borrow().requires_grad;
        self.push(Op::Leaf, vec![], tensor, needs)
    }

    /// Registers an owned tensor as a non-trainable leaf.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.into_ref())
    }

    pub fn tensor(&self, v: Var) -> TensorRef {
        Rc::clone(&self.nodes[v.0].out)
    }

    pub fn data(&self, v: Var) -> Vec<f64> {
        self.nodes[v.0].out.borrow().data().to_vec()
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].out.borrow().shape().to_vec()
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, out: TensorRef, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            inputs,
            out,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn result(&mut self, op: Op, inputs: Vec<Var>, out: Tensor) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(
            op,
            inputs.iter().map(|v| v.0).collect(),
            out.into_ref(),
            needs,
        )
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize), NumericsError> {
        let t = self.nodes[v.0].out.borrow();
        match t.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(NumericsError::ShapeMismatch(format!(
                "{what} expects a rank-2 tensor, got shape {s:?}"
            ))),
        }
    }

    /// c[i,j] = sum_p a[i,p] * b[p,j]
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (kb, n) = self.dims2(b, "matmul rhs")?;
        if k != kb {
            return Err(NumericsError::ShapeMismatch(format!(
                "matmul inner dimensions disagree: [{m}x{k}] vs [{kb}x{n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        {
            let ta = self.nodes[a.0].out.borrow();
            let tb = self.nodes[b.0].out.borrow();
            gemm(&mut out, 0.0, ta.data(), m, k, false, tb.data(), kb, n, false);
        }
        Ok(self.result(Op::Matmul, vec![a, b], Tensor::new(vec![m, n], out)?))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims2(x, "transpose")?;
        let mut out = vec![0.0; m * n];
        {
            let t = self.nodes[x.0].out.borrow();
            let d = t.data();
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = d[i * n + j];
                }
            }
        }
        Ok(self.result(Op::Transpose, vec![x], Tensor::new(vec![n, m], out)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa != sb {
            return Err(NumericsError::ShapeMismatch(format!(
                "add expects equal shapes, got {sa:?} vs {sb:?}"
            )));
        }
        let out: Vec<f64> = {
            let ta = self.nodes[a.0].out.borrow();
            let tb = self.nodes[b.0].out.borrow();
            ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect()
        };
        Ok(self.result(Op::Add, vec![a, b], Tensor::new(sa, out)?))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa != sb {
            return Err(NumericsError::ShapeMismatch(format!(
                "mul expects equal shapes, got {sa:?} vs {sb:?}"
            )));
        }
        let out: Vec<f64> = {
            let ta = self.nodes[a.0].out.borrow();
            let tb = self.nodes[b.0].out.borrow();
            ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect()
        };
        Ok(self.result(Op::Mul, vec![a, b], Tensor::new(sa, out)?))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let shape = self.shape_of(x);
        let out: Vec<f64> = self.nodes[x.0]
            .out
            .borrow()
            .data()
            .iter()
            .map(|v| c * v)
            .collect();
        self.result(Op::Scale(c), vec![x], Tensor::new(shape, out).expect("same shape"))
    }

    /// out[i,j] = x[i,j] + row[j]
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims2(x, "add_row lhs")?;
        let rs = self.shape_of(row);
        if rs != [n] {
            return Err(NumericsError::ShapeMismatch(format!(
                "add_row expects a [{n}] row vector, got {rs:?}"
            )));
        }
        let mut out = vec![0.0; m * n];
        {
            let tx = self.nodes[x.0].out.borrow();
            let tr = self.nodes[row.0].out.borrow();
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] = tx.data()[i * n + j] + tr.data()[j];
                }
            }
        }
        Ok(self.result(Op::AddRow, vec![x, row], Tensor::new(vec![m, n], out)?))
    }

    /// Elementwise tanh-approximation GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let shape = self.shape_of(x);
        let s = (2.0 / std::f64::consts::PI).sqrt();
        let (out, tanh_cache): (Vec<f64>, Vec<f64>) = {
            let t = self.nodes[x.0].out.borrow();
            let mut out = Vec::with_capacity(t.len());
            let mut cache = Vec::with_capacity(t.len());
            for &v in t.data() {
                let u = s * (v + GELU_C * v * v * v);
                let th = u.tanh();
                cache.push(th);
                out.push(0.5 * v * (1.0 + th));
            }
            (out, cache)
        };
        self.result(
            Op::Gelu { tanh_cache },
            vec![x],
            Tensor::new(shape, out).expect("same shape"),
        )
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims2(x, "softmax_rows")?;
        let mut out = vec![0.0; m * n];
        {
            let t = self.nodes[x.0].out.borrow();
            let d = t.data();
            for i in 0..m {
                let row = &d[i * n..(i + 1) * n];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (row[j] - max).exp();
                    out[i * n + j] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[i * n + j] /= sum;
                }
            }
        }
        Ok(self.result(Op::SoftmaxRows, vec![x], Tensor::new(vec![m, n], out)?))
    }

    /// Normalizes the last axis to zero mean / unit variance, then applies
    /// the affine `gain`/`bias`. Accepts rank-1 (one row) or rank-2 input.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, NumericsError> {
        if eps <= 0.0 {
            return Err(NumericsError::ShapeMismatch(format!(
                "layer_norm eps must be positive, got {eps}"
            )));
        }
        let shape = self.shape_of(x);
        let (m, n) = match shape.as_slice() {
            [n] => (1usize, *n),
            [m, n] => (*m, *n),
            s => {
                return Err(NumericsError::ShapeMismatch(format!(
                    "layer_norm expects rank-1 or rank-2 input, got {s:?}"
                )))
            }
        };
        for (v, what) in [(gain, "gain"), (bias, "bias")] {
            let s = self.shape_of(v);
            if s != [n] {
                return Err(NumericsError::ShapeMismatch(format!(
                    "layer_norm {what} must have shape [{n}], got {s:?}"
                )));
            }
        }
        let mut out = vec![0.0; m * n];
        let mut mean = vec![0.0; m];
        let mut rstd = vec![0.0; m];
        {
            let tx = self.nodes[x.0].out.borrow();
            let tg = self.nodes[gain.0].out.borrow();
            let tb = self.nodes[bias.0].out.borrow();
            let d = tx.data();
            for i in 0..m {
                let row = &d[i * n..(i + 1) * n];
                let mu = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
                let rs = 1.0 / (var + eps).sqrt();
                mean[i] = mu;
                rstd[i] = rs;
                for j in 0..n {
                    let xhat = (row[j] - mu) * rs;
                    out[i * n + j] = xhat * tg.data()[j] + tb.data()[j];
                }
            }
        }
        Ok(self.result(
            Op::LayerNorm { mean, rstd },
            vec![x, gain, bias],
            Tensor::new(shape, out)?,
        ))
    }

    /// Replaces entries above the diagonal with [`MASK_FILL`]; the input must
    /// be square. Gradient flows only through the kept entries.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims2(x, "causal_mask")?;
        if m != n {
            return Err(NumericsError::ShapeMismatch(format!(
                "causal_mask expects a square matrix, got [{m}x{n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        {
            let t = self.nodes[x.0].out.borrow();
            let d = t.data();
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] = if j <= i { d[i * n + j] } else { MASK_FILL };
                }
            }
        }
        Ok(self.result(Op::CausalMask, vec![x], Tensor::new(vec![m, n], out)?))
    }

    /// out[i] = table[indices[i]]; gradient scatter-adds into table rows.
    pub fn gather_rows(&mut self, table: Var, indices: Vec<usize>) -> Result<Var, NumericsError> {
        let (rows, cols) = self.dims2(table, "gather_rows table")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::ShapeMismatch(format!(
                "gather_rows index {bad} out of range for {rows} rows"
            )));
        }
        let m = indices.len();
        let mut out = vec![0.0; m * cols];
        {
            let t = self.nodes[table.0].out.borrow();
            let d = t.data();
            for (i, &r) in indices.iter().enumerate() {
                out[i * cols..(i + 1) * cols].copy_from_slice(&d[r * cols..(r + 1) * cols]);
            }
        }
        Ok(self.result(
            Op::GatherRows { indices },
            vec![table],
            Tensor::new(vec![m, cols], out)?,
        ))
    }

    /// Stacks rank-2 tensors with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::ShapeMismatch(
                "concat_rows needs at least one part".into(),
            ));
        }
        let (_, cols) = self.dims2(parts[0], "concat_rows")?;
        let mut offsets = vec![0usize];
        let mut total = 0usize;
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if c != cols {
                return Err(NumericsError::ShapeMismatch(format!(
                    "concat_rows column mismatch: {c} vs {cols}"
                )));
            }
            total += r;
            offsets.push(total);
        }
        let mut out = vec![0.0; total * cols];
        for (idx, &p) in parts.iter().enumerate() {
            let t = self.nodes[p.0].out.borrow();
            let start = offsets[idx] * cols;
            out[start..start + t.len()].copy_from_slice(t.data());
        }
        Ok(self.result(
            Op::ConcatRows { offsets },
            parts.to_vec(),
            Tensor::new(vec![total, cols], out)?,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if start + len > n {
            return Err(NumericsError::ShapeMismatch(format!(
                "slice_cols [{start}..{}) out of range for {n} columns",
                start + len
            )));
        }
        let mut out = vec![0.0; m * len];
        {
            let t = self.nodes[x.0].out.borrow();
            let d = t.data();
            for i in 0..m {
                out[i * len..(i + 1) * len]
                    .copy_from_slice(&d[i * n + start..i * n + start + len]);
            }
        }
        Ok(self.result(
            Op::SliceCols { start, len },
            vec![x],
            Tensor::new(vec![m, len], out)?,
        ))
    }

    /// Concatenates rank-2 tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::ShapeMismatch(
                "concat_cols needs at least one part".into(),
            ));
        }
        let (rows, _) = self.dims2(parts[0], "concat_cols")?;
        let mut offsets = vec![0usize];
        let mut total = 0usize;
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != rows {
                return Err(NumericsError::ShapeMismatch(format!(
                    "concat_cols row mismatch: {r} vs {rows}"
                )));
            }
            total += c;
            offsets.push(total);
        }
        let mut out = vec![0.0; rows * total];
        for (idx, &p) in parts.iter().enumerate() {
            let t = self.nodes[p.0].out.borrow();
            let c = t.cols();
            for i in 0..rows {
                out[i * total + offsets[idx]..i * total + offsets[idx] + c]
                    .copy_from_slice(&t.data()[i * c..(i + 1) * c]);
            }
        }
        Ok(self.result(
            Op::ConcatCols { offsets },
            parts.to_vec(),
            Tensor::new(vec![rows, total], out)?,
        ))
    }

    /// Sum of all elements; the output is a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.nodes[x.0].out.borrow().data().iter().sum();
        self.result(Op::Sum, vec![x], Tensor::scalar(total))
    }

    /// Mean over masked positions of -log softmax(logits)[t, targets[t]].
    /// Unmasked positions contribute exactly zero to value and gradient.
    pub fn cross_entropy_masked(
        &mut self,
        logits: Var,
        targets: &[u32],
        mask: &[bool],
    ) -> Result<Var, NumericsError> {
        let (t_len, vocab) = self.dims2(logits, "cross_entropy_masked logits")?;
        if targets.len() != t_len || mask.len() != t_len {
            return Err(NumericsError::ShapeMismatch(format!(
                "cross_entropy_masked lengths disagree: logits {t_len} rows, {} targets, {} mask",
                targets.len(),
                mask.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t as usize >= vocab) {
            return Err(NumericsError::InvalidTarget {
                target: bad,
                vocab,
            });
        }
        let masked_rows: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        if masked_rows.is_empty() {
            return Err(NumericsError::EmptyMask);
        }
        let n_masked = masked_rows.len();
        let mut probs = vec![0.0; n_masked * vocab];
        let mut loss = 0.0;
        {
            let t = self.nodes[logits.0].out.borrow();
            let d = t.data();
            for (k, &r) in masked_rows.iter().enumerate() {
                let row = &d[r * vocab..(r + 1) * vocab];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..vocab {
                    let e = (row[j] - max).exp();
                    probs[k * vocab + j] = e;
                    sum += e;
                }
                for j in 0..vocab {
                    probs[k * vocab + j] /= sum;
                }
                let lse = max + sum.ln();
                loss += lse - row[targets[r] as usize];
            }
        }
        loss /= n_masked as f64;
        Ok(self.result(
            Op::CrossEntropyMasked {
                targets: targets.to_vec(),
                probs,
                masked_rows,
            },
            vec![logits],
            Tensor::scalar(loss),
        ))
    }

    /// Reverse pass from a scalar root. Gradients accumulate into every
    /// `requires_grad` leaf tensor; repeated calls without zeroing add up.
    pub fn backward(&mut self, root: Var) -> Result<(), NumericsError> {
        {
            let t = self.nodes[root.0].out.borrow();
            if !t.is_scalar() {
                return Err(NumericsError::NonScalarRoot(t.shape().to_vec()));
            }
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[root.0].needs_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for i in (0..=root.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    let mut t = self.nodes[i].out.borrow_mut();
                    if t.requires_grad {
                        t.accumulate_grad(&gout);
                    }
                }
                _ => self.backprop_node(i, &gout, &mut grads),
            }
        }
        Ok(())
    }

    fn input_needs(&self, node: usize, slot: usize) -> bool {
        self.nodes[self.nodes[node].inputs[slot]].needs_grad
    }

    fn add_into(grads: &mut Vec<Option<Vec<f64>>>, idx: usize, len: usize) -> &mut Vec<f64> {
        grads[idx].get_or_insert_with(|| vec![0.0; len])
    }

    #[allow(clippy::too_many_lines)]
    fn backprop_node(&self, i: usize, gout: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        let inputs = self.nodes[i].inputs.clone();
        match &self.nodes[i].op {
            Op::Leaf => unreachable!("leaves handled by caller"),
            Op::Matmul => {
                let ta = self.nodes[inputs[0]].out.borrow();
                let tb = self.nodes[inputs[1]].out.borrow();
                let (m, k) = (ta.rows(), ta.cols());
                let (_, n) = (tb.rows(), tb.cols());
                if self.input_needs(i, 0) {
                    let ga = Self::add_into(grads, inputs[0], m * k);
                    // dA = G * B^T
                    gemm(ga, 1.0, gout, m, n, false, tb.data(), k, n, true);
                }
                if self.input_needs(i, 1) {
                    let gb = Self::add_into(grads, inputs[1], k * n);
                    // dB = A^T * G
                    gemm(gb, 1.0, ta.data(), m, k, true, gout, m, n, false);
                }
            }
            Op::Transpose => {
                if self.input_needs(i, 0) {
                    let t = self.nodes[inputs[0]].out.borrow();
                    let (m, n) = (t.rows(), t.cols());
                    drop(t);
                    let gx = Self::add_into(grads, inputs[0], m * n);
                    for r in 0..n {
                        for c in 0..m {
                            gx[c * n + r] += gout[r * m + c];
                        }
                    }
                }
            }
            Op::Add => {
                for slot in 0..2 {
                    if self.input_needs(i, slot) {
                        let gx = Self::add_into(grads, inputs[slot], gout.len());
                        for (g, d) in gx.iter_mut().zip(gout) {
                            *g += d;
                        }
                    }
                }
            }
            Op::Mul => {
                for slot in 0..2 {
                    if self.input_needs(i, slot) {
                        let other = self.nodes[inputs[1 - slot]].out.borrow();
                        let gx = Self::add_into(grads, inputs[slot], gout.len());
                        for ((g, d), o) in gx.iter_mut().zip(gout).zip(other.data()) {
                            *g += d * o;
                        }
                    }
                }
            }
            Op::Scale(c) => {
                if self.input_needs(i, 0) {
                    let c = *c;
                    let gx = Self::add_into(grads, inputs[0], gout.len());
                    for (g, d) in gx.iter_mut().zip(gout) {
                        *g += c * d;
                    }
                }
            }
            Op::AddRow => {
                let (m, n) = {
                    let t = self.nodes[inputs[0]].out.borrow();
                    (t.rows(), t.cols())
                };
                if self.input_needs(i, 0) {
                    let gx = Self::add_into(grads, inputs[0], m * n);
                    for (g, d) in gx.iter_mut().zip(gout) {
                        *g += d;
                    }
                }
                if self.input_needs(i, 1) {
                    let gr = Self::add_into(grads, inputs[1], n);
                    for r in 0..m {
                        for j in 0..n {
                            gr[j] += gout[r * n + j];
                        }
                    }
                }
            }
            Op::Gelu { tanh_cache } => {
                if self.input_needs(i, 0) {
                    let t = self.nodes[inputs[0]].out.borrow();
                    let s = (2.0 / std::f64::consts::PI).sqrt();
                    let gx = Self::add_into(grads, inputs[0], gout.len());
                    for (j, (&x, &th)) in t.data().iter().zip(tanh_cache).enumerate() {
                        let du = s * (1.0 + 3.0 * GELU_C * x * x);
                        let d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
                        gx[j] += gout[j] * d;
                    }
                }
            }
            Op::SoftmaxRows => {
                if self.input_needs(i, 0) {
                    let y = self.nodes[i].out.borrow();
                    let (m, n) = (y.rows(), y.cols());
                    let gx = Self::add_into(grads, inputs[0], m * n);
                    for r in 0..m {
                        let yr = &y.data()[r * n..(r + 1) * n];
                        let gr = &gout[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gx[r * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { mean, rstd, .. } => {
                let tx = self.nodes[inputs[0]].out.borrow();
                let tg = self.nodes[inputs[1]].out.borrow();
                let n = tg.len();
                let m = tx.len() / n;
                let xd = tx.data();
                let gd = tg.data();
                if self.input_needs(i, 1) {
                    let ggain = Self::add_into(grads, inputs[1], n);
                    for r in 0..m {
                        for j in 0..n {
                            let xhat = (xd[r * n + j] - mean[r]) * rstd[r];
                            ggain[j] += gout[r * n + j] * xhat;
                        }
                    }
                }
                if self.input_needs(i, 2) {
                    let gbias = Self::add_into(grads, inputs[2], n);
                    for r in 0..m {
                        for j in 0..n {
                            gbias[j] += gout[r * n + j];
                        }
                    }
                }
                if self.input_needs(i, 0) {
                    let gx = Self::add_into(grads, inputs[0], m * n);
                    for r in 0..m {
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..n {
                            let xhat = (xd[r * n + j] - mean[r]) * rstd[r];
                            let dxhat = gout[r * n + j] * gd[j];
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * xhat;
                        }
                        mean_dxhat /= n as f64;
                        mean_dxhat_xhat /= n as f64;
                        for j in 0..n {
                            let xhat = (xd[r * n + j] - mean[r]) * rstd[r];
                            let dxhat = gout[r * n + j] * gd[j];
                            gx[r * n + j] +=
                                rstd[r] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                        }
                    }
                }
            }
            Op::CausalMask => {
                if self.input_needs(i, 0) {
                    let t = self.nodes[i].out.borrow();
                    let n = t.cols();
                    let m = t.rows();
                    drop(t);
                    let gx = Self::add_into(grads, inputs[0], m * n);
                    for r in 0..m {
                        for c in 0..=r {
                            gx[r * n + c] += gout[r * n + c];
                        }
                    }
                }
            }
            Op::GatherRows { indices } => {
                if self.input_needs(i, 0) {
                    let t = self.nodes[inputs[0]].out.borrow();
                    let (rows, cols) = (t.rows(), t.cols());
                    drop(t);
                    let gt = Self::add_into(grads, inputs[0], rows * cols);
                    for (r, &src) in indices.iter().enumerate() {
                        for j in 0..cols {
                            gt[src * cols + j] += gout[r * cols + j];
                        }
                    }
                }
            }
            Op::ConcatRows { offsets } => {
                let cols = self.nodes[i].out.borrow().cols();
                for (slot, input) in inputs.iter().enumerate() {
                    if self.input_needs(i, slot) {
                        let len = (offsets[slot + 1] - offsets[slot]) * cols;
                        let start = offsets[slot] * cols;
                        let gp = Self::add_into(grads, *input, len);
                        for (g, d) in gp.iter_mut().zip(&gout[start..start + len]) {
                            *g += d;
                        }
                    }
                }
            }
            Op::SliceCols { start, len } => {
                if self.input_needs(i, 0) {
                    let t = self.nodes[inputs[0]].out.borrow();
                    let (m, n) = (t.rows(), t.cols());
                    drop(t);
                    let gx = Self::add_into(grads, inputs[0], m * n);
                    for r in 0..m {
                        for j in 0..*len {
                            gx[r * n + start + j] += gout[r * len + j];
                        }
                    }
                }
            }
            Op::ConcatCols { offsets } => {
                let total = self.nodes[i].out.borrow().cols();
                let rows = self.nodes[i].out.borrow().rows();
                for (slot, input) in inputs.iter().enumerate() {
                    if self.input_needs(i, slot) {
                        let c = offsets[slot + 1] - offsets[slot];
                        let gp = Self::add_into(grads, *input, rows * c);
                        for r in 0..rows {
                            for j in 0..c {
                                gp[r * c + j] += gout[r * total + offsets[slot] + j];
                            }
                        }
                    }
                }
            }
            Op::Sum => {
                if self.input_needs(i, 0) {
                    let len = self.nodes[inputs[0]].out.borrow().len();
                    let gx = Self::add_into(grads, inputs[0], len);
                    for g in gx.iter_mut() {
                        *g += gout[0];
                    }
                }
            }
            Op::CrossEntropyMasked {
                targets,
                probs,
                masked_rows,
                ..
            } => {
                if self.input_needs(i, 0) {
                    let vocab = self.nodes[inputs[0]].out.borrow().cols();
                    let t_len = self.nodes[inputs[0]].out.borrow().rows();
                    let gl = Self::add_into(grads, inputs[0], t_len * vocab);
                    let inv = gout[0] / masked_rows.len() as f64;
                    for (k, &r) in masked_rows.iter().enumerate() {
                        let target = targets[r] as usize;
                        for j in 0..vocab {
                            let delta = if j == target { 1.0 } else { 0.0 };
                            gl[r * vocab + j] += inv * (probs[k * vocab + j] - delta);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf_with_grad(g: &mut Graph, shape: Vec<usize>, data: Vec<f64>) -> (Var, TensorRef) {
        let t = Tensor::new(shape, data).unwrap().with_grad().into_ref();
        (g.leaf(Rc::clone(&t)), t)
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i2 = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let a = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = g.matmul(i2, a).unwrap();
        assert_eq!(g.data(c), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_mentions_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 2]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.contains("2x2"), "{err}");
    }

    #[test]
    fn square_gradient() {
        // d(x^2)/dx at x=3 is 6
        let mut g = Graph::new();
        let (x, xt) = leaf_with_grad(&mut g, vec![], vec![3.0]);
        let y = g.mul(x, x).unwrap();
        let root = g.sum(y);
        g.backward(root).unwrap();
        assert_eq!(xt.borrow().grad.as_deref(), Some(&[6.0][..]));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let (x, xt) = leaf_with_grad(&mut g, vec![], vec![3.0]);
        let y = g.mul(x, x).unwrap();
        let root = g.sum(y);
        g.backward(root).unwrap();
        g.backward(root).unwrap();
        assert_eq!(xt.borrow().grad.as_deref(), Some(&[12.0][..]));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let (x, _t) = leaf_with_grad(&mut g, vec![2], vec![1.0, 2.0]);
        let err = g.backward(x).unwrap_err();
        assert!(matches!(err, NumericsError::NonScalarRoot(_)));
    }

    #[test]
    fn softmax_symmetry_and_overflow() {
        let mut g = Graph::new();
        let x = g
            .constant(Tensor::matrix(2, 3, vec![0.0, 0.0, 0.0, 1000.0, 0.0, 0.0]).unwrap());
        let y = g.softmax_rows(x).unwrap();
        let d = g.data(y);
        for v in &d[0..3] {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((d[3] - 1.0).abs() < 1e-12);
        assert!(d[4].abs() < 1e-12 && d[5].abs() < 1e-12);
        let sums: Vec<f64> = d.chunks(3).map(|r| r.iter().sum()).collect();
        for s in sums {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 4, vec![5.0; 4]).unwrap());
        let gain = g.constant(Tensor::new(vec![4], vec![1.0; 4]).unwrap());
        let bias = g.constant(Tensor::new(vec![4], vec![0.0; 4]).unwrap());
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        for v in g.data(y) {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn layer_norm_statistics() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::new();
        // rows with std 10 so eps=1e-5 perturbs variance below 1e-6
        let x = g.constant(Tensor::randn(vec![6, 64], 10.0, &mut rng));
        let gain = g.constant(Tensor::new(vec![64], vec![1.0; 64]).unwrap());
        let bias = g.constant(Tensor::new(vec![64], vec![0.0; 64]).unwrap());
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        let d = g.data(y);
        for row in d.chunks(64) {
            let mu = row.iter().sum::<f64>() / 64.0;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 64.0;
            assert!(mu.abs() < 1e-10, "mean {mu}");
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn gelu_limits() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2], vec![0.0, 10.0]).unwrap());
        let y = g.gelu(x);
        let d = g.data(y);
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 10.0).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(3, 7, vec![0.25; 21]).unwrap());
        let loss = g
            .cross_entropy_masked(x, &[0, 3, 6], &[true, true, false])
            .unwrap();
        let d = g.data(loss);
        assert!((d[0] - (7.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturated_correct() {
        let mut g = Graph::new();
        let mut logits = vec![0.0; 14];
        logits[2] = 50.0; // row 0 target 2
        logits[7 + 5] = 50.0; // row 1 target 5
        let x = g.constant(Tensor::matrix(2, 7, logits).unwrap());
        let loss = g.cross_entropy_masked(x, &[2, 5], &[true, true]).unwrap();
        assert!(g.data(loss)[0] < 1e-3);
    }

    #[test]
    fn cross_entropy_unmasked_target_irrelevant() {
        let logits: Vec<f64> = (0..21).map(|i| (i as f64 * 0.37).sin()).collect();
        let run = |targets: &[u32]| {
            let mut g = Graph::new();
            let x = g.constant(Tensor::matrix(3, 7, logits.clone()).unwrap());
            let loss = g
                .cross_entropy_masked(x, targets, &[true, false, true])
                .unwrap();
            g.data(loss)[0]
        };
        let a = run(&[1, 2, 3]);
        let b = run(&[1, 6, 3]);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn cross_entropy_all_false_mask_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let err = g.cross_entropy_masked(x, &[0, 0], &[false, false]).unwrap_err();
        assert!(matches!(err, NumericsError::EmptyMask));
    }

    #[test]
    fn causal_mask_keeps_lower_triangle() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.causal_mask(x).unwrap();
        let d = g.data(y);
        assert_eq!(d[0], 1.0);
        assert_eq!(d[1], MASK_FILL);
        assert_eq!(d[2], 3.0);
        assert_eq!(d[3], 4.0);
    }

    #[test]
    fn gather_and_concat_roundtrip_grads() {
        let mut g = Graph::new();
        let (table, tt) = leaf_with_grad(&mut g, vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let picked = g.gather_rows(table, vec![2, 0, 2]).unwrap();
        assert_eq!(g.data(picked), vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let s = g.sum(picked);
        g.backward(s).unwrap();
        // row 2 gathered twice, row 1 never
        assert_eq!(
            tt.borrow().grad.as_deref(),
            Some(&[1.0, 1.0, 0.0, 0.0, 2.0, 2.0][..])
        );
    }

    #[test]
    fn slice_concat_cols_inverse() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(2, 4, (0..8).map(f64::from).collect()).unwrap());
        let a = g.slice_cols(x, 0, 2).unwrap();
        let b = g.slice_cols(x, 2, 2).unwrap();
        let back = g.concat_cols(&[a, b]).unwrap();
        assert_eq!(g.data(back), g.data(x));
    }
}
