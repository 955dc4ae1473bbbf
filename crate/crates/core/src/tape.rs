//! Reverse-mode differentiation over the small op set the network uses.
//!
//! A [`Graph`] records every executed operation in order; [`Graph::backward`]
//! walks the record in reverse and accumulates adjoints. Tensors of rank 3 are
//! read as `batch × rows × cols`; rank 2 as a single `rows × cols` sample.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(0);

/// Handle to a value recorded on a particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: usize,
    idx: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx
    }
}

/// Discriminant of a recorded operation, used to target fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    LeftMul,
    RightMul,
    BlockLeftMul,
    ConcatRows,
    GatherRows,
    Reshape,
    Add,
    Sub,
    Scale,
    Tanh,
    Abs,
    TripletNorm,
    Mean,
    BatchNorm,
}

enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    LeftMul(Var, Var),
    RightMul(Var, Var),
    BlockLeftMul(Var, Var),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, S),
    Tanh(Var),
    Abs(Var),
    TripletNorm(Var),
    Mean(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
        train: bool,
    },
}

impl<S> Op<S> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::LeftMul(..) => OpKind::LeftMul,
            Op::RightMul(..) => OpKind::RightMul,
            Op::BlockLeftMul(..) => OpKind::BlockLeftMul,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Scale(..) => OpKind::Scale,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Abs(..) => OpKind::Abs,
            Op::TripletNorm(..) => OpKind::TripletNorm,
            Op::Mean(..) => OpKind::Mean,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Batch statistics produced by a train-mode batch-norm node.
#[derive(Debug, Clone)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

pub struct Graph<S> {
    id: usize,
    nodes: Vec<Node<S>>,
    fault: Option<(OpKind, S)>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// Scales the weight-operand gradient of every `kind` node by `factor`.
    ///
    /// Only meant for mutation tests of the gradient checker.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind, factor: S) {
        self.fault = Some((kind, factor));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Kinds of the recorded operations, in execution order.
    pub fn op_kinds(&self) -> Vec<OpKind> {
        self.nodes.iter().map(|n| n.op.kind()).collect()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self.id, idx }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::NotOnTape(v.idx));
        }
        Ok(())
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.idx].requires_grad
    }

    /// Records a constant input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable input; [`Graph::backward`] reports its gradient.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.idx].value
    }

    /// Matrix product of two rank-2 values.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `A · X_b` for every sample `X_b`, with one shared `A: m×n`.
    pub fn left_mul(&mut self, a: Var, x: Var) -> Result<Var> {
        self.check(a)?;
        self.check(x)?;
        let (av, xv) = (self.value(a), self.value(x));
        if av.rank() != 2 || xv.rank() < 2 || av.shape()[1] != xv.rows() {
            return Err(Error::shape(
                "left_mul",
                format!("{:?} · {:?}", av.shape(), xv.shape()),
            ));
        }
        let (m, n, c, nb) = (av.shape()[0], av.shape()[1], xv.cols(), xv.batch());
        let mut out = vec![S::zero(); nb * m * c];
        for b in 0..nb {
            S::gemm(
                m,
                n,
                c,
                av.data(),
                (n as isize, 1),
                &xv.data()[b * n * c..],
                (c as isize, 1),
                S::zero(),
                &mut out[b * m * c..],
            );
        }
        let shape = batched_shape(xv, m, c);
        let rg = self.rg(a) || self.rg(x);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::LeftMul(a, x), rg))
    }

    /// `X · W` applied along the last axis; leading axes are flattened.
    pub fn right_mul(&mut self, x: Var, w: Var) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.rank() != 2 || xv.rank() < 2 || xv.cols() != wv.shape()[0] {
            return Err(Error::shape(
                "right_mul",
                format!("{:?} · {:?}", xv.shape(), wv.shape()),
            ));
        }
        let (k, n) = (wv.shape()[0], wv.shape()[1]);
        let r = xv.len() / k;
        let mut out = vec![S::zero(); r * n];
        S::gemm(
            r,
            k,
            n,
            xv.data(),
            (k as isize, 1),
            wv.data(),
            (n as isize, 1),
            S::zero(),
            &mut out,
        );
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::RightMul(x, w), rg))
    }

    /// Block-diagonal left product: blocks `G×s×s` act on consecutive row groups of size `s`.
    pub fn block_left_mul(&mut self, blocks: Var, x: Var) -> Result<Var> {
        self.check(blocks)?;
        self.check(x)?;
        let (bv, xv) = (self.value(blocks), self.value(x));
        let ok = bv.rank() == 3
            && bv.shape()[1] == bv.shape()[2]
            && xv.rank() >= 2
            && bv.shape()[0] * bv.shape()[1] == xv.rows();
        if !ok {
            return Err(Error::shape(
                "block_left_mul",
                format!("blocks {:?} on {:?}", bv.shape(), xv.shape()),
            ));
        }
        let (g, s) = (bv.shape()[0], bv.shape()[1]);
        let (rows, c) = (xv.rows(), xv.cols());
        let (ad, xd) = (bv.data(), xv.data());
        let mut out = vec![S::zero(); xv.len()];
        for b in 0..xv.batch() {
            let base = b * rows * c;
            for gi in 0..g {
                for i in 0..s {
                    let orow = &mut out[base + (gi * s + i) * c..base + (gi * s + i + 1) * c];
                    for j in 0..s {
                        let coef = ad[(gi * s + i) * s + j];
                        let irow = &xd[base + (gi * s + j) * c..base + (gi * s + j + 1) * c];
                        for (o, &v) in orow.iter_mut().zip(irow) {
                            *o = *o + coef * v;
                        }
                    }
                }
            }
        }
        let out = Tensor::from_vec(xv.shape(), out)?;
        let rg = self.rg(blocks) || self.rg(x);
        Ok(self.push(out, Op::BlockLeftMul(blocks, x), rg))
    }

    /// Stacks the row axis of every part in order; batch and column sizes must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no blocks"));
        }
        for &p in parts {
            self.check(p)?;
        }
        let first = self.value(parts[0]);
        let (rank, nb, c) = (first.rank(), first.batch(), first.cols());
        if rank < 2 {
            return Err(Error::shape("concat_rows", "blocks must be matrices"));
        }
        for &p in parts {
            let v = self.value(p);
            if v.rank() != rank || v.batch() != nb || v.cols() != c {
                return Err(Error::shape(
                    "concat_rows",
                    format!("block {:?} does not match {:?}", v.shape(), first.shape()),
                ));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut out = Vec::with_capacity(nb * total * c);
        for b in 0..nb {
            for &p in parts {
                let v = self.value(p);
                let sz = v.rows() * c;
                out.extend_from_slice(&v.data()[b * sz..(b + 1) * sz]);
            }
        }
        let shape = batched_shape(first, total, c);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Output row `r` is input row `index[r]` (per sample).
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        if xv.rank() < 2 || index.is_empty() || index.iter().any(|&i| i >= xv.rows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("index out of range for {:?}", xv.shape()),
            ));
        }
        let (rows, c) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(xv.batch() * index.len() * c);
        for b in 0..xv.batch() {
            for &i in index {
                let start = (b * rows + i) * c;
                out.extend_from_slice(&xv.data()[start..start + c]);
            }
        }
        let shape = batched_shape(xv, index.len(), c);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_vec(&shape, out)?,
            Op::GatherRows(x, index.to_vec()),
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, k: S) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).scale(k);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Scale(x, k), rg))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| v.tanh());
        let rg = self.rg(x);
        Ok(self.push(out, Op::Tanh(x), rg))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| v.abs());
        let rg = self.rg(x);
        Ok(self.push(out, Op::Abs(x), rg))
    }

    /// Euclidean norm of each consecutive row triplet: `3G × C` rows become `G × C`.
    pub fn triplet_norm(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        if xv.rank() < 2 || xv.rows() % 3 != 0 {
            return Err(Error::shape(
                "triplet_norm",
                format!("row count of {:?} not divisible by 3", xv.shape()),
            ));
        }
        let (rows, c) = (xv.rows(), xv.cols());
        let g = rows / 3;
        let d = xv.data();
        let mut out = vec![S::zero(); xv.batch() * g * c];
        for b in 0..xv.batch() {
            for gi in 0..g {
                for t in 0..c {
                    let at = |k: usize| d[(b * rows + 3 * gi + k) * c + t];
                    let (x0, x1, x2) = (at(0), at(1), at(2));
                    out[(b * g + gi) * c + t] = (x0 * x0 + x1 * x1 + x2 * x2).sqrt();
                }
            }
        }
        let shape = batched_shape(xv, g, c);
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::TripletNorm(x), rg))
    }

    /// Mean of all entries, as a one-element tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let m = xv.sum() / S::from_usize_lossy(xv.len());
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(m), Op::Mean(x), rg))
    }

    /// Per-feature batch normalization of `x: batch × N × H`.
    ///
    /// In train mode the statistics are taken over batch and hidden axes and
    /// returned; in eval mode `running` supplies them.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: S,
        running: Option<(&[S], &[S])>,
    ) -> Result<(Var, Option<BatchStats<S>>)> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let n = xv.rows();
        if xv.rank() != 3 || gv.len() != n || bv.len() != n {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "x {:?}, gamma {:?}, beta {:?}",
                    xv.shape(),
                    gv.shape(),
                    bv.shape()
                ),
            ));
        }
        let (nb, h) = (xv.batch(), xv.cols());
        let count = S::from_usize_lossy(nb * h);
        let d = xv.data();
        let (mean, var, stats) = match running {
            Some((rm, rv)) => {
                if rm.len() != n || rv.len() != n {
                    return Err(Error::shape("batch_norm", "running stats size"));
                }
                (rm.to_vec(), rv.to_vec(), None)
            }
            None => {
                let mut mean = vec![S::zero(); n];
                let mut var = vec![S::zero(); n];
                for f in 0..n {
                    let mut acc = S::zero();
                    for b in 0..nb {
                        for &v in &d[(b * n + f) * h..(b * n + f + 1) * h] {
                            acc = acc + v;
                        }
                    }
                    let mu = acc / count;
                    let mut sq = S::zero();
                    for b in 0..nb {
                        for &v in &d[(b * n + f) * h..(b * n + f + 1) * h] {
                            sq = sq + (v - mu) * (v - mu);
                        }
                    }
                    mean[f] = mu;
                    var[f] = sq / count;
                }
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                };
                (mean, var, Some(stats))
            }
        };
        let inv_std: Vec<S> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let mut xhat = vec![S::zero(); xv.len()];
        let mut out = vec![S::zero(); xv.len()];
        for b in 0..nb {
            for f in 0..n {
                let (g, be) = (gv.data()[f], bv.data()[f]);
                for t in 0..h {
                    let i = (b * n + f) * h + t;
                    let xh = (d[i] - mean[f]) * inv_std[f];
                    xhat[i] = xh;
                    out[i] = g * xh + be;
                }
            }
        }
        let out = Tensor::from_vec(xv.shape(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let train = running.is_none();
        let var_out = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        );
        Ok((var_out, stats))
    }

    /// Propagates adjoints from the scalar `loss` back to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(Tensor::full(self.value(loss).shape(), S::one()));

        for idx in (0..=loss.idx).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let fault = match self.fault {
                Some((kind, factor)) if kind == node.op.kind() => factor,
                _ => S::one(),
            };
            self.backprop_node(node, &gy, fault, &mut grads)?;
            grads[idx] = Some(gy);
        }

        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn backprop_node(
        &self,
        node: &Node<S>,
        gy: &Tensor<S>,
        fault: S,
        grads: &mut [Option<Tensor<S>>],
    ) -> Result<()> {
        let gd = gy.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.rg(*a) {
                    let mut ga = vec![S::zero(); m * k];
                    // dA = dC · Bᵀ
                    S::gemm(m, n, k, gd, (n as isize, 1), bv.data(), (1, n as isize), S::zero(), &mut ga);
                    accumulate(grads, *a, av.shape(), ga);
                }
                if self.rg(*b) {
                    let mut gb = vec![S::zero(); k * n];
                    // dB = Aᵀ · dC
                    S::gemm(k, m, n, av.data(), (1, k as isize), gd, (n as isize, 1), S::zero(), &mut gb);
                    accumulate(grads, *b, bv.shape(), gb);
                }
            }
            Op::LeftMul(a, x) => {
                let (av, xv) = (self.value(*a), self.value(*x));
                let (m, n, c, nb) = (av.shape()[0], av.shape()[1], xv.cols(), xv.batch());
                if self.rg(*a) {
                    let mut ga = vec![S::zero(); m * n];
                    for b in 0..nb {
                        // dA += dY_b · X_bᵀ
                        S::gemm(
                            m,
                            c,
                            n,
                            &gd[b * m * c..],
                            (c as isize, 1),
                            &xv.data()[b * n * c..],
                            (1, c as isize),
                            S::one(),
                            &mut ga,
                        );
                    }
                    scale_in_place(&mut ga, fault);
                    accumulate(grads, *a, av.shape(), ga);
                }
                if self.rg(*x) {
                    let mut gx = vec![S::zero(); nb * n * c];
                    for b in 0..nb {
                        // dX_b = Aᵀ · dY_b
                        S::gemm(
                            n,
                            m,
                            c,
                            av.data(),
                            (1, n as isize),
                            &gd[b * m * c..],
                            (c as isize, 1),
                            S::zero(),
                            &mut gx[b * n * c..],
                        );
                    }
                    accumulate(grads, *x, xv.shape(), gx);
                }
            }
            Op::RightMul(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (k, n) = (wv.shape()[0], wv.shape()[1]);
                let r = xv.len() / k;
                if self.rg(*w) {
                    let mut gw = vec![S::zero(); k * n];
                    // dW = Xᵀ · dY
                    S::gemm(k, r, n, xv.data(), (1, k as isize), gd, (n as isize, 1), S::zero(), &mut gw);
                    scale_in_place(&mut gw, fault);
                    accumulate(grads, *w, wv.shape(), gw);
                }
                if self.rg(*x) {
                    let mut gx = vec![S::zero(); r * k];
                    // dX = dY · Wᵀ
                    S::gemm(r, n, k, gd, (n as isize, 1), wv.data(), (1, n as isize), S::zero(), &mut gx);
                    accumulate(grads, *x, xv.shape(), gx);
                }
            }
            Op::BlockLeftMul(blocks, x) => {
                let (bv, xv) = (self.value(*blocks), self.value(*x));
                let (g, s) = (bv.shape()[0], bv.shape()[1]);
                let (rows, c) = (xv.rows(), xv.cols());
                let (ad, xd) = (bv.data(), xv.data());
                if self.rg(*blocks) {
                    let mut ga = vec![S::zero(); bv.len()];
                    for b in 0..xv.batch() {
                        let base = b * rows * c;
                        for gi in 0..g {
                            for i in 0..s {
                                let grow = &gd[base + (gi * s + i) * c..base + (gi * s + i + 1) * c];
                                for j in 0..s {
                                    let xrow = &xd[base + (gi * s + j) * c..base + (gi * s + j + 1) * c];
                                    let dot = grow.iter().zip(xrow).fold(S::zero(), |acc, (&p, &q)| acc + p * q);
                                    let slot = &mut ga[(gi * s + i) * s + j];
                                    *slot = *slot + dot;
                                }
                            }
                        }
                    }
                    scale_in_place(&mut ga, fault);
                    accumulate(grads, *blocks, bv.shape(), ga);
                }
                if self.rg(*x) {
                    let mut gx = vec![S::zero(); xv.len()];
                    for b in 0..xv.batch() {
                        let base = b * rows * c;
                        for gi in 0..g {
                            for j in 0..s {
                                let orow = &mut gx[base + (gi * s + j) * c..base + (gi * s + j + 1) * c];
                                for i in 0..s {
                                    let coef = ad[(gi * s + i) * s + j];
                                    let grow = &gd[base + (gi * s + i) * c..base + (gi * s + i + 1) * c];
                                    for (o, &v) in orow.iter_mut().zip(grow) {
                                        *o = *o + coef * v;
                                    }
                                }
                            }
                        }
                    }
                    accumulate(grads, *x, xv.shape(), gx);
                }
            }
            Op::ConcatRows(parts) => {
                let c = gy.cols();
                let total = gy.rows();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let pr = pv.rows();
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(pv.len());
                        for b in 0..gy.batch() {
                            let start = (b * total + offset) * c;
                            gp.extend_from_slice(&gd[start..start + pr * c]);
                        }
                        accumulate(grads, p, pv.shape(), gp);
                    }
                    offset += pr;
                }
            }
            Op::GatherRows(x, index) => {
                let xv = self.value(*x);
                let (rows, c) = (xv.rows(), xv.cols());
                let mut gx = vec![S::zero(); xv.len()];
                for b in 0..xv.batch() {
                    for (r, &i) in index.iter().enumerate() {
                        let src = &gd[(b * index.len() + r) * c..(b * index.len() + r + 1) * c];
                        let dst = &mut gx[(b * rows + i) * c..(b * rows + i + 1) * c];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
                accumulate(grads, *x, xv.shape(), gx);
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                accumulate(grads, *x, &shape, gd.to_vec());
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        accumulate(grads, v, gy.shape(), gd.to_vec());
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, gy.shape(), gd.to_vec());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, gy.shape(), gd.iter().map(|&v| -v).collect());
                }
            }
            Op::Scale(x, k) => {
                accumulate(grads, *x, gy.shape(), gd.iter().map(|&v| v * *k).collect());
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                let gx = gd
                    .iter()
                    .zip(y)
                    .map(|(&g, &t)| g * (S::one() - t * t))
                    .collect();
                accumulate(grads, *x, gy.shape(), gx);
            }
            Op::Abs(x) => {
                let xd = self.value(*x).data();
                let gx = gd
                    .iter()
                    .zip(xd)
                    .map(|(&g, &v)| g * sign(v))
                    .collect();
                accumulate(grads, *x, gy.shape(), gx);
            }
            Op::TripletNorm(x) => {
                let xv = self.value(*x);
                let (rows, c) = (xv.rows(), xv.cols());
                let g = rows / 3;
                let (xd, yd) = (xv.data(), node.value.data());
                let mut gx = vec![S::zero(); xv.len()];
                for b in 0..xv.batch() {
                    for gi in 0..g {
                        for t in 0..c {
                            let oi = (b * g + gi) * c + t;
                            let norm = yd[oi];
                            if norm == S::zero() {
                                continue;
                            }
                            let k = gd[oi] / norm;
                            for d in 0..3 {
                                let ii = (b * rows + 3 * gi + d) * c + t;
                                gx[ii] = k * xd[ii];
                            }
                        }
                    }
                }
                accumulate(grads, *x, xv.shape(), gx);
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let k = gd[0] / S::from_usize_lossy(xv.len());
                accumulate(grads, *x, xv.shape(), vec![k; xv.len()]);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let xv = self.value(*x);
                let gamma_v = self.value(*gamma);
                let (nb, n, h) = (xv.batch(), xv.rows(), xv.cols());
                let mut sum_dy = vec![S::zero(); n];
                let mut sum_dy_xhat = vec![S::zero(); n];
                for b in 0..nb {
                    for f in 0..n {
                        for t in 0..h {
                            let i = (b * n + f) * h + t;
                            sum_dy[f] = sum_dy[f] + gd[i];
                            sum_dy_xhat[f] = sum_dy_xhat[f] + gd[i] * xhat[i];
                        }
                    }
                }
                if self.rg(*gamma) {
                    accumulate(grads, *gamma, gamma_v.shape(), sum_dy_xhat.clone());
                }
                if self.rg(*beta) {
                    let shape = self.value(*beta).shape().to_vec();
                    accumulate(grads, *beta, &shape, sum_dy.clone());
                }
                if self.rg(*x) {
                    let count = S::from_usize_lossy(nb * h);
                    let mut gx = vec![S::zero(); xv.len()];
                    for b in 0..nb {
                        for f in 0..n {
                            let k = gamma_v.data()[f] * inv_std[f];
                            for t in 0..h {
                                let i = (b * n + f) * h + t;
                                gx[i] = if *train {
                                    k * (gd[i] - sum_dy[f] / count - xhat[i] * sum_dy_xhat[f] / count)
                                } else {
                                    k * gd[i]
                                };
                            }
                        }
                    }
                    accumulate(grads, *x, xv.shape(), gx);
                }
            }
        }
        Ok(())
    }
}

fn sign<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        S::one()
    } else if v < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

fn scale_in_place<S: Scalar>(v: &mut [S], k: S) {
    if k != S::one() {
        v.iter_mut().for_each(|x| *x = *x * k);
    }
}

fn batched_shape<S: Scalar>(like: &Tensor<S>, rows: usize, cols: usize) -> Vec<usize> {
    if like.rank() == 3 {
        vec![like.batch(), rows, cols]
    } else {
        vec![rows, cols]
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Tensor<S>>], v: Var, shape: &[usize], g: Vec<S>) {
    match &mut grads[v.idx] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(g) {
                *e = *e + d;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::from_vec(shape, g).expect("gradient shape matches value"));
        }
    }
}

/// Adjoints produced by one backward pass.
pub struct Gradients<S> {
    tape: usize,
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss with respect to `v`; zeros when `v` did not influence it.
    pub fn get(&self, graph: &Graph<S>, v: Var) -> Tensor<S> {
        assert_eq!(v.tape, self.tape, "variable from another tape");
        self.grads[v.idx]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()))
    }
}
