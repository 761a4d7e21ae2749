use super::ops::{self, gelu_grad_scalar, matmul_nt_raw, matmul_tn_raw};
use super::{Real, Tensor};
use crate::error::{contract_err, shape_err, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, F),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<F>,
        rstd: Vec<F>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Conv1d {
        x: Var,
        w: Var,
        stride: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    ScatterRows {
        x: Var,
        idx: Vec<usize>,
    },
    Reshape(Var),
    Sum(Var),
    MeanRows(Var),
    RowNorm(Var),
    L2Normalize(Var),
    OuterAdd(Var, Var),
    Select {
        x: Var,
        index: usize,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep. A tape built with
/// [`Tape::no_grad`] records only values: every node is a detached leaf.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    grad_enabled: bool,
    matmul_flops: u64,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
            matmul_flops: 0,
        }
    }

    pub fn no_grad() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// FLOPs spent in matmul and conv kernels so far (one MAC = 2 FLOPs).
    pub fn matmul_flops(&self) -> u64 {
        self.matmul_flops
    }

    /// Number of nodes through which gradient can flow.
    pub fn tracked_nodes(&self) -> usize {
        self.nodes.iter().filter(|n| n.requires_grad).count()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf. Gradients are only tracked if the tape records.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        let rg = self.grad_enabled;
        self.push_raw(value, Op::Leaf, rg)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, parents: &[Var]) -> Var {
        let rg = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        if rg {
            self.push_raw(value, op, true)
        } else {
            self.push_raw(value, Op::Leaf, false)
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let n = self.value(b).dims2()?.1;
        let out = ops::matmul(self.value(a), self.value(b))?;
        self.matmul_flops += 2 * (m * k * n) as u64;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = ops::transpose(self.value(a))?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!(
                "{} operands differ: {:?} vs {:?}",
                what,
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let (va, vb) = (self.value(a), self.value(b));
        Tensor {
            shape: va.shape().to_vec(),
            data: va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// `x[m×n] + bias[n]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = self.value(x).rows_cols();
        if self.value(bias).numel() != cols {
            return Err(shape_err!(
                "bias of {} elements for rows of width {}",
                self.value(bias).numel(),
                cols
            ));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for r in 0..rows {
            for (v, &bv) in data[r * cols..(r + 1) * cols].iter_mut().zip(b) {
                *v += bv;
            }
        }
        let out = Tensor {
            shape: self.shape(x).to_vec(),
            data,
        };
        Ok(self.push(out, Op::AddRowBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, s: F) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = ops::gelu(self.value(x));
        self.push(out, Op::Gelu(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (out, stats) =
            ops::layer_norm_stats(self.value(x), self.value(gamma), self.value(beta))?;
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            normalized: stats.normalized,
            rstd: stats.rstd,
        };
        Ok(self.push(out, op, &[x, gamma, beta]))
    }

    pub fn softmax_lastdim(&mut self, x: Var) -> Var {
        let out = ops::softmax_lastdim(self.value(x));
        self.push(out, Op::Softmax(x), &[x])
    }

    pub fn log_softmax_lastdim(&mut self, x: Var) -> Var {
        let out = ops::log_softmax_lastdim(self.value(x));
        self.push(out, Op::LogSoftmax(x), &[x])
    }

    /// See [`ops::conv1d_strided`]; `w` is `[kernel × c_in × c_out]`.
    pub fn conv1d_strided(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let out = ops::conv1d_strided(self.value(x), self.value(w), stride)?;
        let ws = self.shape(w);
        let macs = out.numel() * ws[0] * ws[1];
        self.matmul_flops += 2 * macs as u64;
        Ok(self.push(out, Op::Conv1d { x, w, stride }, &[x, w]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if len == 0 || start + len > cols {
            return Err(shape_err!(
                "column slice {}..{} of width {}",
                start,
                start + len,
                cols
            ));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let out = Tensor {
            shape: vec![rows, len],
            data,
        };
        Ok(self.push(out, Op::SliceCols { x, start }, &[x]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if len == 0 || start + len > rows {
            return Err(shape_err!(
                "row slice {}..{} of {} rows",
                start,
                start + len,
                rows
            ));
        }
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor {
            shape: vec![len, cols],
            data,
        };
        Ok(self.push(out, Op::SliceRows { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).dims2()?.0,
            None => return Err(contract_err!("concat of zero tensors")),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(shape_err!("concat row counts differ: {} vs {}", r, rows));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor {
            shape: vec![rows, total],
            data,
        };
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Row `i` of the result is row `idx[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if idx.is_empty() || idx.iter().any(|&i| i >= rows) {
            return Err(shape_err!("gather indices {:?} out of {} rows", idx, rows));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let out = Tensor {
            shape: vec![idx.len(), cols],
            data,
        };
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    /// Places row `i` of `x` at row `idx[i]` of an `n`-row zero matrix.
    /// Targets must be distinct.
    pub fn scatter_rows(&mut self, x: Var, idx: &[usize], n: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if idx.len() != rows || idx.iter().any(|&i| i >= n) {
            return Err(shape_err!(
                "scatter of {} rows to {:?} within {}",
                rows,
                idx,
                n
            ));
        }
        let mut seen = vec![false; n];
        for &i in idx {
            if std::mem::replace(&mut seen[i], true) {
                return Err(contract_err!("scatter target row {} repeated", i));
            }
        }
        let src = self.value(x).data();
        let mut data = vec![F::zero(); n * cols];
        for (r, &i) in idx.iter().enumerate() {
            data[i * cols..(i + 1) * cols].copy_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        let out = Tensor {
            shape: vec![n, cols],
            data,
        };
        Ok(self.push(
            out,
            Op::ScatterRows {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, F::one() / F::of(n as f64))
    }

    /// Mean over rows, `[m×n] → [1×n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        let inv = F::one() / F::of(rows as f64);
        let src = self.value(x).data();
        let mut data = vec![F::zero(); cols];
        for r in 0..rows {
            for (d, &v) in data.iter_mut().zip(&src[r * cols..(r + 1) * cols]) {
                *d += v;
            }
        }
        data.iter_mut().for_each(|d| *d *= inv);
        let out = Tensor {
            shape: vec![1, cols],
            data,
        };
        Ok(self.push(out, Op::MeanRows(x), &[x]))
    }

    /// Euclidean norm of each row, `[m×n] → [m]`.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let (rows, cols) = self.value(x).rows_cols();
        let src = self.value(x).data();
        let data = (0..rows)
            .map(|r| {
                src[r * cols..(r + 1) * cols]
                    .iter()
                    .map(|&v| v * v)
                    .sum::<F>()
                    .sqrt()
            })
            .collect();
        let out = Tensor {
            shape: vec![rows],
            data,
        };
        self.push(out, Op::RowNorm(x), &[x])
    }

    /// Scales the whole tensor to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let norm = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v * v)
            .sum::<F>()
            .sqrt();
        if norm <= F::zero() {
            return Err(contract_err!("cannot normalize a zero vector"));
        }
        let out = self.value(x).map(|v| v / norm);
        Ok(self.push(out, Op::L2Normalize(x), &[x]))
    }

    /// Row `i·n + j` of the result is `a[i] + b[j]`.
    pub fn outer_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.value(a).dims2()?;
        let (n, kb) = self.value(b).dims2()?;
        if ka != kb {
            return Err(shape_err!("outer add widths differ: {} vs {}", ka, kb));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(m * n * ka);
        for i in 0..m {
            for j in 0..n {
                data.extend(
                    va[i * ka..(i + 1) * ka]
                        .iter()
                        .zip(&vb[j * ka..(j + 1) * ka])
                        .map(|(&x, &y)| x + y),
                );
            }
        }
        let out = Tensor {
            shape: vec![m * n, ka],
            data,
        };
        Ok(self.push(out, Op::OuterAdd(a, b), &[a, b]))
    }

    /// Element at flat `index`, as a scalar node.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let v = self.value(x);
        if index >= v.numel() {
            return Err(shape_err!("select index {} of {}", index, v.numel()));
        }
        let out = Tensor::scalar(v.data()[index]);
        Ok(self.push(out, Op::Select { x, index }, &[x]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).numel() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![F::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) -> Result<()> {
        let node = &self.nodes[i];
        let mut acc = |v: Var, delta: Vec<F>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.iter_mut().zip(delta) {
                        *e += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.dims2()?;
                let n = vb.dims2()?.1;
                if self.requires_grad(*a) {
                    acc(*a, matmul_nt_raw(g, vb.data(), m, n, k));
                }
                if self.requires_grad(*b) {
                    acc(*b, matmul_tn_raw(va.data(), g, m, k, n));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).dims2()?;
                let mut d = vec![F::zero(); m * n];
                for r in 0..m {
                    for c in 0..n {
                        d[r * n + c] = g[c * m + r];
                    }
                }
                acc(*a, d);
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, g.iter().zip(vb).map(|(&x, &y)| x * y).collect());
                acc(*b, g.iter().zip(va).map(|(&x, &y)| x * y).collect());
            }
            Op::AddRowBias(x, bias) => {
                acc(*x, g.to_vec());
                let cols = self.value(*bias).numel();
                let mut db = vec![F::zero(); cols];
                for row in g.chunks(cols) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                acc(*bias, db);
            }
            Op::Scale(x, s) => acc(*x, g.iter().map(|&v| v * *s).collect()),
            Op::Gelu(x) => {
                let vx = self.value(*x).data();
                acc(
                    *x,
                    g.iter()
                        .zip(vx)
                        .map(|(&gv, &xv)| gv * gelu_grad_scalar(xv))
                        .collect(),
                );
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                rstd,
            } => {
                let cols = self.value(*gamma).numel();
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![F::zero(); cols];
                let mut dbeta = vec![F::zero(); cols];
                let mut dx = vec![F::zero(); g.len()];
                let inv_n = F::one() / F::of(cols as f64);
                for (r, &rs) in rstd.iter().enumerate() {
                    let gr = &g[r * cols..(r + 1) * cols];
                    let xh = &normalized[r * cols..(r + 1) * cols];
                    let mut sum_dxh = F::zero();
                    let mut sum_dxh_xh = F::zero();
                    for c in 0..cols {
                        dgamma[c] += gr[c] * xh[c];
                        dbeta[c] += gr[c];
                        let dxh = gr[c] * gam[c];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[c];
                    }
                    for c in 0..cols {
                        let dxh = gr[c] * gam[c];
                        dx[r * cols + c] =
                            rs * (dxh - inv_n * sum_dxh - xh[c] * inv_n * sum_dxh_xh);
                    }
                }
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let (_, cols) = node.value.rows_cols();
                let mut dx = vec![F::zero(); g.len()];
                for (r, (yr, gr)) in y.chunks(cols).zip(g.chunks(cols)).enumerate() {
                    let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for c in 0..cols {
                        dx[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::LogSoftmax(x) => {
                let y = node.value.data();
                let (_, cols) = node.value.rows_cols();
                let mut dx = vec![F::zero(); g.len()];
                for (r, (yr, gr)) in y.chunks(cols).zip(g.chunks(cols)).enumerate() {
                    let total: F = gr.iter().copied().sum();
                    for c in 0..cols {
                        dx[r * cols + c] = gr[c] - yr[c].exp() * total;
                    }
                }
                acc(*x, dx);
            }
            Op::Conv1d { x, w, stride } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (_, c_in) = vx.dims2()?;
                let (kernel, c_out) = (vw.shape()[0], vw.shape()[2]);
                let out_len = g.len() / c_out;
                let mut dx = vec![F::zero(); vx.numel()];
                let mut dw = vec![F::zero(); vw.numel()];
                for o in 0..out_len {
                    let go = &g[o * c_out..(o + 1) * c_out];
                    for k in 0..kernel {
                        let row = o * stride + k;
                        let xrow = &vx.data()[row * c_in..(row + 1) * c_in];
                        let wk = &vw.data()[k * c_in * c_out..(k + 1) * c_in * c_out];
                        for ci in 0..c_in {
                            let wrow = &wk[ci * c_out..(ci + 1) * c_out];
                            let mut s = F::zero();
                            for (&gv, &wv) in go.iter().zip(wrow) {
                                s += gv * wv;
                            }
                            dx[row * c_in + ci] += s;
                            let xv = xrow[ci];
                            let dwrow =
                                &mut dw[(k * c_in + ci) * c_out..(k * c_in + ci + 1) * c_out];
                            for (d, &gv) in dwrow.iter_mut().zip(go) {
                                *d += xv * gv;
                            }
                        }
                    }
                }
                acc(*x, dx);
                acc(*w, dw);
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.value(*x).dims2()?;
                let len = node.value.shape()[1];
                let mut dx = vec![F::zero(); rows * cols];
                for r in 0..rows {
                    dx[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                acc(*x, dx);
            }
            Op::SliceRows { x, start } => {
                let (rows, cols) = self.value(*x).dims2()?;
                let mut dx = vec![F::zero(); rows * cols];
                dx[start * cols..start * cols + g.len()].copy_from_slice(g);
                acc(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let rows = node.value.shape()[0];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    let mut dp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    acc(p, dp);
                    offset += w;
                }
            }
            Op::GatherRows { x, idx } => {
                let (rows, cols) = self.value(*x).dims2()?;
                let mut dx = vec![F::zero(); rows * cols];
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..cols {
                        dx[src * cols + c] += g[r * cols + c];
                    }
                }
                acc(*x, dx);
            }
            Op::ScatterRows { x, idx } => {
                let cols = node.value.shape()[1];
                let mut dx = Vec::with_capacity(idx.len() * cols);
                for &dst in idx {
                    dx.extend_from_slice(&g[dst * cols..(dst + 1) * cols]);
                }
                acc(*x, dx);
            }
            Op::Reshape(x) => acc(*x, g.to_vec()),
            Op::Sum(x) => acc(*x, vec![g[0]; self.value(*x).numel()]),
            Op::MeanRows(x) => {
                let (rows, cols) = self.value(*x).dims2()?;
                let inv = F::one() / F::of(rows as f64);
                let mut dx = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    dx.extend(g.iter().map(|&v| v * inv));
                }
                acc(*x, dx);
            }
            Op::RowNorm(x) => {
                let vx = self.value(*x);
                let (_, cols) = vx.rows_cols();
                let norms = node.value.data();
                let mut dx = vec![F::zero(); vx.numel()];
                for (r, &nrm) in norms.iter().enumerate() {
                    if nrm == F::zero() {
                        continue;
                    }
                    for c in 0..cols {
                        dx[r * cols + c] = g[r] * vx.data()[r * cols + c] / nrm;
                    }
                }
                acc(*x, dx);
            }
            Op::L2Normalize(x) => {
                let vx = self.value(*x).data();
                let y = node.value.data();
                let norm = vx.iter().map(|&v| v * v).sum::<F>().sqrt();
                let dot: F = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                acc(
                    *x,
                    g.iter()
                        .zip(y)
                        .map(|(&gv, &yv)| (gv - yv * dot) / norm)
                        .collect(),
                );
            }
            Op::OuterAdd(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let n = self.value(*b).dims2()?.0;
                let mut da = vec![F::zero(); m * k];
                let mut db = vec![F::zero(); n * k];
                for i in 0..m {
                    for j in 0..n {
                        let row = &g[(i * n + j) * k..(i * n + j + 1) * k];
                        for c in 0..k {
                            da[i * k + c] += row[c];
                            db[j * k + c] += row[c];
                        }
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::Select { x, index } => {
                let mut dx = vec![F::zero(); self.value(*x).numel()];
                dx[*index] = g[0];
                acc(*x, dx);
            }
        }
        Ok(())
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient with respect to `v`; zeros when no path reached it.
    pub fn wrt(&self, tape: &Tape<F>, v: Var) -> Tensor<F> {
        let shape = tape.shape(v).to_vec();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor {
                shape,
                data: g.clone(),
            },
            None => Tensor::zeros(&shape),
        }
    }

    pub fn reached(&self, v: Var) -> bool {
        self.grads.get(v.0).is_some_and(|g| g.is_some())
    }
}
