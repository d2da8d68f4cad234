use std::sync::atomic::{AtomicU64, Ordering};

use super::{broadcast_kind, gemm, Binary, Broadcast, Tensor, Unary, View};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    /// `x * w^T + b` with `w` stored `[out x in]`.
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    Binary(Binary, usize, usize, Broadcast),
    Unary(Unary, usize),
    Scale(usize, f64),
    Softmax(usize, f64),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    ConcatCols(Vec<usize>),
    SliceCols {
        a: usize,
        start: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    trainable: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is a topological order by
/// construction. One tape per thread; it is consumed by [`Tape::backward`].
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf; it always receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true, true)
    }

    /// Registers a non-differentiated input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        debug_assert_eq!(v.tape, self.id);
        &self.nodes[v.index].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, trainable: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            trainable,
        });
        Var { tape: self.id, index }
    }

    fn node(&self, v: Var) -> Result<&Node> {
        if v.tape != self.id {
            return Err(Error::Tape(format!(
                "variable belongs to tape {} but was used on tape {}",
                v.tape, self.id
            )));
        }
        Ok(&self.nodes[v.index])
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.node(a)?.value.matmul(&self.node(b)?.value)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a.index, b.index), rg, false))
    }

    /// Affine layer `x * w^T + b` for `x: [batch x in]`, `w: [out x in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (&self.node(x)?.value, &self.node(w)?.value, &self.node(b)?.value);
        if xv.shape().len() != 2 || wv.shape().len() != 2 || xv.shape()[1] != wv.shape()[1] {
            return Err(Error::dim("linear", xv.shape(), wv.shape()));
        }
        let (batch, out_dim) = (xv.shape()[0], wv.shape()[0]);
        if bv.len() != out_dim {
            return Err(Error::dim("linear bias", wv.shape(), bv.shape()));
        }
        let mut out = Vec::with_capacity(batch * out_dim);
        for _ in 0..batch {
            out.extend_from_slice(bv.data());
        }
        gemm(xv.view(), wv.view().t(), 1.0, &mut out);
        let value = Tensor::matrix(batch, out_dim, out)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            value,
            Op::Linear {
                x: x.index,
                w: w.index,
                b: b.index,
            },
            rg,
            false,
        ))
    }

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        let kind = broadcast_kind("elementwise", av.shape(), bv.shape())?;
        let value = av.binary(op, bv)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Binary(op, a.index, b.index, kind), rg, false))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn unary(&mut self, op: Unary, a: Var) -> Result<Var> {
        let value = self.node(a)?.value.unary(op);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Unary(op, a.index), rg, false))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.node(a)?.value.scale(factor);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Scale(a.index, factor), rg, false))
    }

    /// Scaled softmax over all entries of `a`, shape preserved.
    pub fn softmax_scaled(&mut self, a: Var, scale: f64) -> Result<Var> {
        let value = self.node(a)?.value.softmax_scaled(scale)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Softmax(a.index, scale), rg, false))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.node(a)?.value.sum());
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Sum(a.index), rg, false))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = &self.node(a)?.value;
        if av.is_empty() {
            return Err(Error::Domain("mean of an empty tensor".into()));
        }
        let value = Tensor::scalar(av.sum() / av.len() as f64);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Mean(a.index), rg, false))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.node(a)?.value.reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a.index), rg, false))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Domain("concat of zero tensors".into()))?;
        let rows = self.node(*first)?.value.rows();
        let mut cols = 0;
        for &p in parts {
            let v = &self.node(p)?.value;
            if v.shape().len() != 2 || v.rows() != rows {
                return Err(Error::dim("concat_cols", &[rows], v.shape()));
            }
            cols += v.cols();
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.nodes[p.index].value.row(r));
            }
        }
        let value = Tensor::matrix(rows, cols, out)?;
        let rg = self.rg(parts);
        Ok(self.push(
            value,
            Op::ConcatCols(parts.iter().map(|p| p.index).collect()),
            rg,
            false,
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = &self.node(a)?.value;
        if av.shape().len() != 2 || start > end || end > av.cols() {
            return Err(Error::dim("slice_cols", av.shape(), &[start, end]));
        }
        let rows = av.rows();
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&av.row(r)[start..end]);
        }
        let value = Tensor::matrix(rows, end - start, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SliceCols { a: a.index, start }, rg, false))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every trainable leaf receives a gradient (zeros when unreachable).
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let loss_node = self.node(loss)?;
        if loss_node.value.len() != 1 {
            return Err(Error::Domain(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.index] = Some(vec![1.0]);

        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        let out = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                if !node.trainable {
                    return None;
                }
                let shape = node.value.shape().to_vec();
                Some(match g {
                    Some(data) => Tensor {
                        shape,
                        data: data.into(),
                    },
                    None => Tensor::zeros(&shape),
                })
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads: out,
        })
    }

    fn wants(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |idx: usize| &self.nodes[idx].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let gv = View::new(g, av.rows(), bv.cols());
                if self.wants(*a) {
                    gemm(gv, bv.view().t(), 1.0, buf(grads, *a, av.len()));
                }
                if self.wants(*b) {
                    gemm(av.view().t(), gv, 1.0, buf(grads, *b, bv.len()));
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (batch, out_dim) = (xv.rows(), wv.rows());
                let gv = View::new(g, batch, out_dim);
                if self.wants(*x) {
                    gemm(gv, wv.view(), 1.0, buf(grads, *x, xv.len()));
                }
                if self.wants(*w) {
                    gemm(gv.t(), xv.view(), 1.0, buf(grads, *w, wv.len()));
                }
                if self.wants(*b) {
                    let db = buf(grads, *b, out_dim);
                    for row in g.chunks_exact(out_dim) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                }
            }
            Op::Binary(op, a, b, kind) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                let cols = match kind {
                    Broadcast::Same => g.len(),
                    Broadcast::Rows { cols } => *cols,
                };
                if self.wants(*a) {
                    let da = buf(grads, *a, g.len());
                    match op {
                        Binary::Add | Binary::Sub => da.iter_mut().zip(g).for_each(|(d, v)| *d += v),
                        Binary::Mul => {
                            for (k, (d, v)) in da.iter_mut().zip(g).enumerate() {
                                *d += v * bv[k % cols];
                            }
                        }
                    }
                }
                if self.wants(*b) {
                    let db = buf(grads, *b, bv.len());
                    for (k, v) in g.iter().enumerate() {
                        let j = k % cols;
                        match op {
                            Binary::Add => db[j] += v,
                            Binary::Sub => db[j] -= v,
                            Binary::Mul => db[j] += v * av[k],
                        }
                    }
                }
            }
            Op::Unary(op, a) => {
                if !self.wants(*a) {
                    return;
                }
                let x = val(*a).data();
                let y = node.value.data();
                let da = buf(grads, *a, g.len());
                match op {
                    Unary::Tanh => {
                        for k in 0..g.len() {
                            da[k] += g[k] * (1.0 - y[k] * y[k]);
                        }
                    }
                    Unary::Relu => {
                        for k in 0..g.len() {
                            if x[k] > 0.0 {
                                da[k] += g[k];
                            }
                        }
                    }
                    Unary::Exp => {
                        for k in 0..g.len() {
                            da[k] += g[k] * y[k];
                        }
                    }
                }
            }
            Op::Scale(a, factor) => {
                if self.wants(*a) {
                    let da = buf(grads, *a, g.len());
                    da.iter_mut().zip(g).for_each(|(d, v)| *d += v * factor);
                }
            }
            Op::Softmax(a, scale) => {
                if self.wants(*a) {
                    let w = node.value.data();
                    let dot: f64 = w.iter().zip(g).map(|(w, g)| w * g).sum();
                    let da = buf(grads, *a, g.len());
                    for k in 0..g.len() {
                        da[k] += w[k] * (g[k] - dot) / scale;
                    }
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let n = val(*a).len();
                    buf(grads, *a, n).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if self.wants(*a) {
                    let n = val(*a).len();
                    let s = g[0] / n as f64;
                    buf(grads, *a, n).iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Reshape(a) => {
                if self.wants(*a) {
                    let da = buf(grads, *a, g.len());
                    da.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).cols();
                    if self.wants(p) {
                        let dp = buf(grads, p, rows * c);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + c];
                            dp[r * c..(r + 1) * c].iter_mut().zip(src).for_each(|(d, v)| *d += v);
                        }
                    }
                    offset += c;
                }
            }
            Op::SliceCols { a, start } => {
                if self.wants(*a) {
                    let av = val(*a);
                    let (rows, cols) = (av.rows(), av.cols());
                    let width = node.value.cols();
                    let da = buf(grads, *a, rows * cols);
                    for r in 0..rows {
                        let dst = &mut da[r * cols + start..r * cols + start + width];
                        dst.iter_mut()
                            .zip(&g[r * width..(r + 1) * width])
                            .for_each(|(d, v)| *d += v);
                    }
                }
            }
        }
    }
}

fn buf(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut [f64] {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

/// Gradients of trainable leaves, produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Gradients for `leaves`, in order. Errors if any is not a trainable leaf.
    pub fn collect(mut self, leaves: &[Var]) -> Result<Vec<Tensor>> {
        leaves
            .iter()
            .map(|v| {
                if v.tape != self.tape {
                    return Err(Error::Tape("gradient requested for a foreign variable".into()));
                }
                self.grads[v.index]
                    .take()
                    .ok_or_else(|| Error::Tape(format!("node {} is not a trainable leaf", v.index)))
            })
            .collect()
    }
}
