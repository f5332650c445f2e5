//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! Ops append nodes to a [`Graph`]; shapes are validated when the node is
//! built, so shape errors surface at construction time with both shapes in
//! the message. [`Graph::backward`] walks the tape once in reverse and
//! accumulates gradients for every node on a path to a trainable leaf.

use std::sync::Arc;

use super::real::{sigmoid, softplus, Real};
use super::sparse::CsrMatrix;
use super::tensor::{matmul, Tensor};
use super::NumericsError;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F: Real> {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddN(Vec<Var>),
    Scale(Var, f64),
    RowSelect(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SoftmaxRowsMasked(Var, Option<Vec<bool>>),
    Log(Var),
    Sigmoid(Var),
    Silu(Var),
    Softplus(Var),
    Dot(Var, Var),
    Index(Var, usize),
    RmsNormRows { x: Var, gamma: Var, eps: f64 },
    Reshape(Var),
    SparseMatmul(Arc<CsrMatrix<F>>, Var),
}

struct Node<F: Real> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<F: Real> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of the loss w.r.t. `v`, if any path connected them.
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of the loss w.r.t. `v`; a node disconnected from the loss
    /// has an all-zero gradient, not an error.
    pub fn get_or_zero(&self, v: Var, shape: &[usize]) -> Tensor<F> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

/// Dynamic computation tape.
pub struct Graph<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; gradients do not flow into it.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf; `backward` produces a gradient for it.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    fn require_rank2(&self, op: &'static str, v: Var) -> Result<(usize, usize), NumericsError> {
        let s = self.value(v).shape();
        if s.len() != 2 {
            return Err(NumericsError::ShapeMismatch {
                op,
                left: s.to_vec(),
                right: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (_n, k) = self.require_rank2("matmul", a)?;
        let (k2, _p) = self.require_rank2("matmul", b)?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let value = matmul(self.value(a), self.value(b));
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Matmul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (n, m) = self.require_rank2("transpose", a)?;
        let src = self.value(a);
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..n {
            for j in 0..m {
                out.row_mut(j)[i] = src.at(i, j);
            }
        }
        let ng = self.needs(a);
        Ok(self.push(out, Op::Transpose(a), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary_elementwise("add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary_elementwise("sub", a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary_elementwise("mul", a, b)
    }

    fn binary_elementwise(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
    ) -> Result<Var, NumericsError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.mismatch(op, a, b));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data: Vec<F> = match op {
            "add" => va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect(),
            "sub" => va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect(),
            _ => va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect(),
        };
        let value = Tensor::from_vec(va.shape(), data).expect("shape preserved");
        let ng = self.needs(a) || self.needs(b);
        let node_op = match op {
            "add" => Op::Add(a, b),
            "sub" => Op::Sub(a, b),
            _ => Op::Mul(a, b),
        };
        Ok(self.push(value, node_op, ng))
    }

    /// Element-wise sum of same-shaped tensors, accumulated in input order.
    pub fn add_n(&mut self, vs: &[Var]) -> Result<Var, NumericsError> {
        let first = vs.first().ok_or(NumericsError::EmptyInput { op: "add_n" })?;
        let shape = self.value(*first).shape().to_vec();
        let mut data = vec![F::ZERO; self.value(*first).numel()];
        for &v in vs {
            if self.value(v).shape() != shape.as_slice() {
                return Err(self.mismatch("add_n", *first, v));
            }
            for (acc, &x) in data.iter_mut().zip(self.value(v).data()) {
                *acc += x;
            }
        }
        let value = Tensor::from_vec(&shape, data).expect("shape preserved");
        let ng = vs.iter().any(|&v| self.needs(v));
        Ok(self.push(value, Op::AddN(vs.to_vec()), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let fc = F::from_f64(c);
        let value = self.value(a).map(|x| x * fc);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, c), ng)
    }

    /// Select rows of a rank-2 tensor (embedding lookup). Indices may repeat.
    pub fn row_select(&mut self, m: Var, idx: &[usize]) -> Result<Var, NumericsError> {
        let (rows, cols) = self.require_rank2("row_select", m)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::IndexOutOfRange {
                op: "row_select",
                index: bad,
                len: rows,
            });
        }
        let src = self.value(m);
        let mut out = Tensor::zeros(&[idx.len(), cols]);
        for (j, &i) in idx.iter().enumerate() {
            out.row_mut(j).copy_from_slice(src.row(i));
        }
        let ng = self.needs(m);
        Ok(self.push(out, Op::RowSelect(m, idx.to_vec()), ng))
    }

    /// Stack rank-2 tensors with equal column counts, top to bottom.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts
            .first()
            .ok_or(NumericsError::EmptyInput { op: "concat_rows" })?;
        let (_, cols) = self.require_rank2("concat_rows", *first)?;
        let mut total = 0usize;
        for &p in parts {
            let (r, c) = self.require_rank2("concat_rows", p)?;
            if c != cols {
                return Err(self.mismatch("concat_rows", *first, p));
            }
            total += r;
        }
        let mut out = Tensor::zeros(&[total, cols]);
        let mut at = 0usize;
        for &p in parts {
            let src = self.value(p);
            for r in 0..src.shape()[0] {
                out.row_mut(at).copy_from_slice(src.row(r));
                at += 1;
            }
        }
        let ng = parts.iter().any(|&v| self.needs(v));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, m: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (rows, cols) = self.require_rank2("slice_cols", m)?;
        if start + len > cols {
            return Err(NumericsError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                len: cols,
            });
        }
        let src = self.value(m);
        let mut out = Tensor::zeros(&[rows, len]);
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(&src.row(r)[start..start + len]);
        }
        let ng = self.needs(m);
        Ok(self.push(out, Op::SliceCols(m, start, len), ng))
    }

    /// Concatenate rank-2 tensors with equal row counts, left to right.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts
            .first()
            .ok_or(NumericsError::EmptyInput { op: "concat_cols" })?;
        let (rows, _) = self.require_rank2("concat_cols", *first)?;
        let mut total = 0usize;
        for &p in parts {
            let (r, c) = self.require_rank2("concat_cols", p)?;
            if r != rows {
                return Err(self.mismatch("concat_cols", *first, p));
            }
            total += c;
        }
        let mut out = Tensor::zeros(&[rows, total]);
        for r in 0..rows {
            let mut at = 0usize;
            for &p in parts {
                let src = self.value(p);
                let c = src.shape()[1];
                out.row_mut(r)[at..at + c].copy_from_slice(src.row(r));
                at += c;
            }
        }
        let ng = parts.iter().any(|&v| self.needs(v));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Mean over rows of a rank-2 tensor, producing a rank-1 tensor.
    pub fn mean_rows(&mut self, m: Var) -> Result<Var, NumericsError> {
        let (rows, cols) = self.require_rank2("mean_rows", m)?;
        if rows == 0 {
            return Err(NumericsError::EmptyInput { op: "mean_rows" });
        }
        let src = self.value(m);
        let inv = F::from_f64(1.0 / rows as f64);
        let mut out = Tensor::zeros(&[cols]);
        for r in 0..rows {
            for (o, &x) in out.data_mut().iter_mut().zip(src.row(r)) {
                *o += x;
            }
        }
        for o in out.data_mut() {
            *o *= inv;
        }
        let ng = self.needs(m);
        Ok(self.push(out, Op::MeanRows(m), ng))
    }

    /// Softmax over a rank-1 tensor.
    pub fn softmax(&mut self, v: Var) -> Result<Var, NumericsError> {
        let src = self.value(v);
        if src.numel() == 0 {
            return Err(NumericsError::EmptyInput { op: "softmax" });
        }
        if src.rank() != 1 {
            return Err(NumericsError::ShapeMismatch {
                op: "softmax",
                left: src.shape().to_vec(),
                right: vec![],
            });
        }
        let out = softmax_slice(src.data());
        let value = Tensor::from_vec(src.shape(), out).expect("shape preserved");
        let ng = self.needs(v);
        Ok(self.push(value, Op::Softmax(v), ng))
    }

    /// Log-softmax over a rank-1 tensor (numerically stable).
    pub fn log_softmax(&mut self, v: Var) -> Result<Var, NumericsError> {
        let src = self.value(v);
        if src.numel() == 0 {
            return Err(NumericsError::EmptyInput { op: "log_softmax" });
        }
        if src.rank() != 1 {
            return Err(NumericsError::ShapeMismatch {
                op: "log_softmax",
                left: src.shape().to_vec(),
                right: vec![],
            });
        }
        let max = src
            .data()
            .iter()
            .fold(src.data()[0], |a, &b| a.max_val(b));
        let log_z = src
            .data()
            .iter()
            .map(|&x| (x - max).exp())
            .sum::<F>()
            .ln()
            + max;
        let value = src.map(|x| x - log_z);
        let ng = self.needs(v);
        Ok(self.push(value, Op::LogSoftmax(v), ng))
    }

    /// Row-wise softmax over a rank-2 tensor with an optional boolean mask
    /// (`false` entries get probability zero). Each row must keep at least
    /// one active entry.
    pub fn softmax_rows_masked(
        &mut self,
        m: Var,
        mask: Option<Vec<bool>>,
    ) -> Result<Var, NumericsError> {
        let (rows, cols) = self.require_rank2("softmax_rows", m)?;
        if let Some(ref mk) = mask {
            if mk.len() != rows * cols {
                return Err(NumericsError::ShapeMismatch {
                    op: "softmax_rows",
                    left: vec![rows, cols],
                    right: vec![mk.len()],
                });
            }
            for r in 0..rows {
                if !mk[r * cols..(r + 1) * cols].iter().any(|&b| b) {
                    return Err(NumericsError::EmptyInput { op: "softmax_rows" });
                }
            }
        }
        let src = self.value(m);
        let mut out = Tensor::zeros(&[rows, cols]);
        for r in 0..rows {
            let row_mask = mask.as_ref().map(|mk| &mk[r * cols..(r + 1) * cols]);
            let vals = masked_softmax_row(src.row(r), row_mask);
            out.row_mut(r).copy_from_slice(&vals);
        }
        let ng = self.needs(m);
        Ok(self.push(out, Op::SoftmaxRowsMasked(m, mask), ng))
    }

    /// Element-wise natural log.
    pub fn log(&mut self, v: Var) -> Var {
        let value = self.value(v).map(|x| x.ln());
        let ng = self.needs(v);
        self.push(value, Op::Log(v), ng)
    }

    /// Element-wise logistic sigmoid.
    pub fn sigmoid(&mut self, v: Var) -> Var {
        let value = self.value(v).map(sigmoid);
        let ng = self.needs(v);
        self.push(value, Op::Sigmoid(v), ng)
    }

    /// Element-wise SiLU `x * sigmoid(x)`; smooth everywhere, which keeps
    /// finite-difference gradient checks clean.
    pub fn silu(&mut self, v: Var) -> Var {
        let value = self.value(v).map(|x| x * sigmoid(x));
        let ng = self.needs(v);
        self.push(value, Op::Silu(v), ng)
    }

    /// Element-wise softplus `ln(1 + exp(x))`.
    pub fn softplus(&mut self, v: Var) -> Var {
        let value = self.value(v).map(softplus);
        let ng = self.needs(v);
        self.push(value, Op::Softplus(v), ng)
    }

    /// Inner product of two rank-1 tensors, producing a scalar (shape `[1]`).
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 1 || vb.rank() != 1 || va.shape() != vb.shape() {
            return Err(self.mismatch("dot", a, b));
        }
        let s: F = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).sum();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), ng))
    }

    /// Pick one element of a rank-1 tensor as a scalar.
    pub fn index(&mut self, v: Var, i: usize) -> Result<Var, NumericsError> {
        let src = self.value(v);
        if src.rank() != 1 || i >= src.numel() {
            return Err(NumericsError::IndexOutOfRange {
                op: "index",
                index: i,
                len: src.numel(),
            });
        }
        let value = Tensor::scalar(src.data()[i]);
        let ng = self.needs(v);
        Ok(self.push(value, Op::Index(v, i), ng))
    }

    /// Row-wise RMS normalization with a learned gain:
    /// `y = gamma * x / sqrt(mean(x^2) + eps)`.
    pub fn rms_norm_rows(&mut self, x: Var, gamma: Var, eps: f64) -> Result<Var, NumericsError> {
        let (rows, cols) = self.require_rank2("rms_norm", x)?;
        let g = self.value(gamma);
        if g.rank() != 1 || g.numel() != cols {
            return Err(self.mismatch("rms_norm", x, gamma));
        }
        let src = self.value(x);
        let feps = F::from_f64(eps);
        let mut out = Tensor::zeros(&[rows, cols]);
        for r in 0..rows {
            let xr = src.row(r);
            let ms: F = xr.iter().map(|&v| v * v).sum::<F>() / F::from_f64(cols as f64);
            let inv = F::ONE / (ms + feps).sqrt();
            for (o, (&xv, &gv)) in out.row_mut(r).iter_mut().zip(xr.iter().zip(g.data())) {
                *o = gv * xv * inv;
            }
        }
        let ng = self.needs(x) || self.needs(gamma);
        Ok(self.push(out, Op::RmsNormRows { x, gamma, eps }, ng))
    }

    /// Reinterpret a tensor under a new shape with equal element count.
    pub fn reshape(&mut self, v: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let src = self.value(v);
        if shape.iter().product::<usize>() != src.numel() {
            return Err(NumericsError::ShapeMismatch {
                op: "reshape",
                left: src.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let value = Tensor::from_vec(shape, src.data().to_vec()).expect("numel checked");
        let ng = self.needs(v);
        Ok(self.push(value, Op::Reshape(v), ng))
    }

    /// `Y = S · X` with a fixed sparse matrix; gradients flow into `X` only.
    pub fn sparse_matmul(
        &mut self,
        s: Arc<CsrMatrix<F>>,
        x: Var,
    ) -> Result<Var, NumericsError> {
        let (rows, _) = self.require_rank2("sparse_matmul", x)?;
        if rows != s.n_cols() {
            return Err(NumericsError::ShapeMismatch {
                op: "sparse_matmul",
                left: vec![s.n_rows(), s.n_cols()],
                right: self.value(x).shape().to_vec(),
            });
        }
        let value = s.matmul_dense(self.value(x));
        let ng = self.needs(x);
        Ok(self.push(value, Op::SparseMatmul(s, x), ng))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NumericsError {
        NumericsError::ShapeMismatch {
            op,
            left: self.value(a).shape().to_vec(),
            right: self.value(b).shape().to_vec(),
        }
    }

    /// Reverse pass from a scalar loss. Returns per-node gradients; nodes
    /// with no path to the loss have no entry (read as zero).
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>, NumericsError> {
        if self.value(loss).numel() != 1 {
            return Err(NumericsError::NonScalarLoss {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), F::ONE));

        // Tape order guarantees inputs precede outputs, so one reverse sweep
        // visits each node after all its consumers.
        for id in (0..self.nodes.len()).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let g = grads[id].take().expect("checked above");
            self.accumulate_inputs(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor<F>>], v: Var, delta: Tensor<F>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate_inputs(&self, id: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                // dA = dC · Bᵀ ; dB = Aᵀ · dC
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut da = Tensor::zeros(va.shape());
                    let p = vb.shape()[1];
                    for i in 0..va.shape()[0] {
                        let g_row = g.row(i);
                        let da_row = da.row_mut(i);
                        for k in 0..va.shape()[1] {
                            let b_row = &vb.data()[k * p..(k + 1) * p];
                            da_row[k] += g_row
                                .iter()
                                .zip(b_row.iter())
                                .map(|(&gv, &bv)| gv * bv)
                                .sum::<F>();
                        }
                    }
                    self.accum(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(vb.shape());
                    let p = vb.shape()[1];
                    for i in 0..va.shape()[0] {
                        let a_row = va.row(i);
                        let g_row = g.row(i);
                        for (k, &a_ik) in a_row.iter().enumerate() {
                            let db_row = &mut db.data_mut()[k * p..(k + 1) * p];
                            for (d, &gv) in db_row.iter_mut().zip(g_row.iter()) {
                                *d += a_ik * gv;
                            }
                        }
                    }
                    self.accum(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                let (n, m) = {
                    let s = self.value(*a).shape();
                    (s[0], s[1])
                };
                let mut da = Tensor::zeros(&[n, m]);
                for i in 0..m {
                    for j in 0..n {
                        da.row_mut(j)[i] = g.at(i, j);
                    }
                }
                self.accum(grads, *a, da);
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let vb = self.value(*b);
                    let mut da = g.clone();
                    for (d, &y) in da.data_mut().iter_mut().zip(vb.data()) {
                        *d *= y;
                    }
                    self.accum(grads, *a, da);
                }
                if self.needs(*b) {
                    let va = self.value(*a);
                    let mut db = g.clone();
                    for (d, &x) in db.data_mut().iter_mut().zip(va.data()) {
                        *d *= x;
                    }
                    self.accum(grads, *b, db);
                }
            }
            Op::AddN(vs) => {
                for &v in vs {
                    self.accum(grads, v, g.clone());
                }
            }
            Op::Scale(a, c) => {
                let fc = F::from_f64(*c);
                self.accum(grads, *a, g.map(|x| x * fc));
            }
            Op::RowSelect(m, idx) => {
                let mut dm = Tensor::zeros(self.value(*m).shape());
                for (j, &i) in idx.iter().enumerate() {
                    let g_row = g.row(j);
                    for (d, &gv) in dm.row_mut(i).iter_mut().zip(g_row.iter()) {
                        *d += gv;
                    }
                }
                self.accum(grads, *m, dm);
            }
            Op::ConcatRows(parts) => {
                let mut at = 0usize;
                for &p in parts {
                    let rows = self.value(p).shape()[0];
                    let cols = self.value(p).shape()[1];
                    if self.needs(p) {
                        let mut dp = Tensor::zeros(&[rows, cols]);
                        for r in 0..rows {
                            dp.row_mut(r).copy_from_slice(g.row(at + r));
                        }
                        self.accum(grads, p, dp);
                    }
                    at += rows;
                }
            }
            Op::SliceCols(m, start, len) => {
                let src = self.value(*m);
                let mut dm = Tensor::zeros(src.shape());
                for r in 0..src.shape()[0] {
                    dm.row_mut(r)[*start..*start + *len].copy_from_slice(g.row(r));
                }
                self.accum(grads, *m, dm);
            }
            Op::ConcatCols(parts) => {
                let mut at = 0usize;
                for &p in parts {
                    let (rows, cols) = {
                        let s = self.value(p).shape();
                        (s[0], s[1])
                    };
                    if self.needs(p) {
                        let mut dp = Tensor::zeros(&[rows, cols]);
                        for r in 0..rows {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[at..at + cols]);
                        }
                        self.accum(grads, p, dp);
                    }
                    at += cols;
                }
            }
            Op::MeanRows(m) => {
                let src = self.value(*m);
                let rows = src.shape()[0];
                let inv = F::from_f64(1.0 / rows as f64);
                let mut dm = Tensor::zeros(src.shape());
                for r in 0..rows {
                    for (d, &gv) in dm.row_mut(r).iter_mut().zip(g.data()) {
                        *d = gv * inv;
                    }
                }
                self.accum(grads, *m, dm);
            }
            Op::Softmax(v) => {
                let s = self.value(Var(id));
                let gs: F = g.data().iter().zip(s.data()).map(|(&gv, &sv)| gv * sv).sum();
                let dv = Tensor::from_vec(
                    s.shape(),
                    s.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&sv, &gv)| sv * (gv - gs))
                        .collect(),
                )
                .expect("shape preserved");
                self.accum(grads, *v, dv);
            }
            Op::LogSoftmax(v) => {
                // dx = g - softmax(x) * sum(g)
                let y = self.value(Var(id));
                let gsum: F = g.data().iter().copied().sum();
                let dv = Tensor::from_vec(
                    y.shape(),
                    y.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&yv, &gv)| gv - yv.exp() * gsum)
                        .collect(),
                )
                .expect("shape preserved");
                self.accum(grads, *v, dv);
            }
            Op::SoftmaxRowsMasked(v, _mask) => {
                let s = self.value(Var(id));
                let (rows, cols) = (s.shape()[0], s.shape()[1]);
                let mut dv = Tensor::zeros(&[rows, cols]);
                for r in 0..rows {
                    let sr = s.row(r);
                    let gr = g.row(r);
                    let gs: F = gr.iter().zip(sr.iter()).map(|(&gv, &sv)| gv * sv).sum();
                    for (d, (&sv, &gv)) in dv.row_mut(r).iter_mut().zip(sr.iter().zip(gr.iter())) {
                        *d = sv * (gv - gs);
                    }
                }
                self.accum(grads, *v, dv);
            }
            Op::Log(v) => {
                let x = self.value(*v);
                let dv = Tensor::from_vec(
                    x.shape(),
                    x.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&xv, &gv)| gv / xv)
                        .collect(),
                )
                .expect("shape preserved");
                self.accum(grads, *v, dv);
            }
            Op::Sigmoid(v) => {
                let s = self.value(Var(id));
                let dv = Tensor::from_vec(
                    s.shape(),
                    s.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&sv, &gv)| gv * sv * (F::ONE - sv))
                        .collect(),
                )
                .expect("shape preserved");
                self.accum(grads, *v, dv);
            }
            Op::Silu(v) => {
                let x = self.value(*v);
                let dv = Tensor::from_vec(
                    x.shape(),
                    x.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&xv, &gv)| {
                            let s = sigmoid(xv);
                            gv * s * (F::ONE + xv * (F::ONE - s))
                        })
                        .collect(),
                )
                .expect("shape preserved");
                self.accum(grads, *v, dv);
            }
            Op::Softplus(v) => {
                let x = self.value(*v);
                let dv = Tensor::from_vec(
                    x.shape(),
                    x.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&xv, &gv)| gv * sigmoid(xv))
                        .collect(),
                )
                .expect("shape preserved");
                self.accum(grads, *v, dv);
            }
            Op::Dot(a, b) => {
                let gs = g.item();
                if self.needs(*a) {
                    let vb = self.value(*b);
                    self.accum(grads, *a, vb.map(|y| y * gs));
                }
                if self.needs(*b) {
                    let va = self.value(*a);
                    self.accum(grads, *b, va.map(|x| x * gs));
                }
            }
            Op::Index(v, i) => {
                let mut dv = Tensor::zeros(self.value(*v).shape());
                dv.data_mut()[*i] = g.item();
                self.accum(grads, *v, dv);
            }
            Op::RmsNormRows { x, gamma, eps } => {
                let vx = self.value(*x);
                let vg = self.value(*gamma);
                let (rows, cols) = (vx.shape()[0], vx.shape()[1]);
                let feps = F::from_f64(*eps);
                let fd = F::from_f64(cols as f64);
                let mut dx = Tensor::zeros(&[rows, cols]);
                let mut dgamma = Tensor::zeros(&[cols]);
                for r in 0..rows {
                    let xr = vx.row(r);
                    let gr = g.row(r);
                    let ms: F = xr.iter().map(|&v| v * v).sum::<F>() / fd;
                    let inv = F::ONE / (ms + feps).sqrt();
                    let inv3 = inv * inv * inv;
                    // s = sum_j g_j * gamma_j * x_j
                    let s: F = gr
                        .iter()
                        .zip(vg.data().iter().zip(xr.iter()))
                        .map(|(&gv, (&gm, &xv))| gv * gm * xv)
                        .sum();
                    for k in 0..cols {
                        dx.row_mut(r)[k] = inv * vg.data()[k] * gr[k] - inv3 / fd * xr[k] * s;
                        dgamma.data_mut()[k] += gr[k] * xr[k] * inv;
                    }
                }
                self.accum(grads, *x, dx);
                self.accum(grads, *gamma, dgamma);
            }
            Op::Reshape(v) => {
                let dv = Tensor::from_vec(self.value(*v).shape(), g.data().to_vec())
                    .expect("numel preserved");
                self.accum(grads, *v, dv);
            }
            Op::SparseMatmul(s, x) => {
                self.accum(grads, *x, s.transpose_matmul_dense(g));
            }
        }
    }
}

fn softmax_slice<F: Real>(xs: &[F]) -> Vec<F> {
    let max = xs.iter().fold(xs[0], |a, &b| a.max_val(b));
    let exps: Vec<F> = xs.iter().map(|&x| (x - max).exp()).collect();
    let z: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn masked_softmax_row<F: Real>(xs: &[F], mask: Option<&[bool]>) -> Vec<F> {
    match mask {
        None => softmax_slice(xs),
        Some(mk) => {
            let mut max: Option<F> = None;
            for (x, &keep) in xs.iter().zip(mk) {
                if keep {
                    max = Some(match max {
                        None => *x,
                        Some(m) => m.max_val(*x),
                    });
                }
            }
            let max = max.expect("row has at least one active entry");
            let exps: Vec<F> = xs
                .iter()
                .zip(mk)
                .map(|(&x, &keep)| if keep { (x - max).exp() } else { F::ZERO })
                .collect();
            let z: F = exps.iter().copied().sum();
            exps.into_iter().map(|e| e / z).collect()
        }
    }
}
