//! Reverse-mode tape over [`Tensor`] values.
//!
//! A [`Graph`] owns every intermediate value of one forward pass; operations
//! append nodes and [`Graph::backward`] walks the tape once in reverse.
//! Constants skip gradient work entirely, parameters are registered by name
//! so their gradients can be collected after backward.

use std::collections::BTreeMap;

use super::tensor::{matmul_nt_into, matmul_tn_into};
use super::{NnError, Tensor};
use crate::geom::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Softmax(NodeId),
    LayerNorm(NodeId),
    Relu(NodeId),
    Gelu(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    WrapToPi(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols { x: NodeId, lo: usize, hi: usize },
    GatherRows { table: NodeId, idx: Vec<usize> },
    CrossEntropyRows { logits: NodeId, targets: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    /// Op-specific saved context (inverse std for layer norm, probabilities
    /// for cross entropy, pre-activation input for pointwise ops).
    ctx: Option<Tensor>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
    grads: Option<Vec<Option<Tensor>>>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward pass, if the node received one.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.as_ref()?.get(id.0)?.as_ref()
    }

    /// Gradients of all registered parameters after [`Graph::backward`];
    /// parameters untouched by the loss get zero gradients.
    pub fn param_grads(&self) -> Result<BTreeMap<String, Tensor>, NnError> {
        let grads = self.grads.as_ref().ok_or(NnError::StaleTape)?;
        let mut out = BTreeMap::new();
        for (name, id) in &self.params {
            let g = grads[id.0]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(self.nodes[id.0].value.shape()));
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, ctx: Option<Tensor>) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite tensor produced");
        self.grads = None; // any new node invalidates previous gradients
        self.nodes.push(Node { value, op, needs_grad, ctx });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A constant input: no gradient is ever propagated into it.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false, None)
    }

    /// A differentiable leaf that is not a named parameter.
    pub fn variable(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true, None)
    }

    /// A named parameter leaf; its gradient shows up in [`Graph::param_grads`].
    pub fn param(&mut self, name: &str, t: Tensor) -> NodeId {
        let id = self.push(t, Op::Leaf, true, None);
        self.params.push((name.to_string(), id));
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let v = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::MatMul(a, b), needs, None))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let needs = self.needs(a);
        self.push(v, Op::Transpose(a), needs, None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let v = self.value(a).add(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a, b), needs, None))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let v = self.value(a).sub(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub(a, b), needs, None))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let v = self.value(a).mul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Mul(a, b), needs, None))
    }

    /// Adds a row vector (shape `[n]` or `[1, n]`) to every row of `x`.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId, NnError> {
        let (xv, rv) = (self.value(x), self.value(row));
        if xv.cols() != rv.numel() {
            return Err(NnError::ShapeMismatch {
                op: "add_row",
                lhs: xv.shape().to_vec(),
                rhs: rv.shape().to_vec(),
            });
        }
        let cols = xv.cols();
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let row_data = rv.data();
            let slice = &mut out.data_mut()[r * cols..(r + 1) * cols];
            for (o, &b) in slice.iter_mut().zip(row_data) {
                *o += b;
            }
        }
        let needs = self.needs(x) || self.needs(row);
        Ok(self.push(out, Op::AddRow(x, row), needs, None))
    }

    /// Multiplies every row of `x` elementwise by a row vector.
    pub fn mul_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId, NnError> {
        let (xv, rv) = (self.value(x), self.value(row));
        if xv.cols() != rv.numel() {
            return Err(NnError::ShapeMismatch {
                op: "mul_row",
                lhs: xv.shape().to_vec(),
                rhs: rv.shape().to_vec(),
            });
        }
        let cols = xv.cols();
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let row_data = rv.data();
            let slice = &mut out.data_mut()[r * cols..(r + 1) * cols];
            for (o, &b) in slice.iter_mut().zip(row_data) {
                *o *= b;
            }
        }
        let needs = self.needs(x) || self.needs(row);
        Ok(self.push(out, Op::MulRow(x, row), needs, None))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        let needs = self.needs(a);
        self.push(v, Op::Scale(a, s), needs, None)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| x + s);
        let needs = self.needs(a);
        self.push(v, Op::AddScalar(a), needs, None)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let cols = x.cols();
        let mut out = x.clone();
        for r in 0..out.rows() {
            let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let needs = self.needs(a);
        self.push(out, Op::Softmax(a), needs, None)
    }

    /// Row-wise normalization to zero mean / unit variance (no affine).
    pub fn layer_norm(&mut self, a: NodeId, eps: f64) -> NodeId {
        let x = self.value(a);
        let (rows, cols) = (x.rows(), x.cols());
        let mut out = x.clone();
        let mut inv_std = Tensor::zeros(&[rows]);
        for r in 0..rows {
            let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std.data_mut()[r] = istd;
            for v in row.iter_mut() {
                *v = (*v - mean) * istd;
            }
        }
        let needs = self.needs(a);
        self.push(out, Op::LayerNorm(a), needs, Some(inv_std))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        let needs = self.needs(a);
        self.push(v, Op::Relu(a), needs, None)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(gelu);
        let needs = self.needs(a);
        self.push(v, Op::Gelu(a), needs, None)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        let needs = self.needs(a);
        self.push(v, Op::Tanh(a), needs, None)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(softplus);
        let needs = self.needs(a);
        self.push(v, Op::Softplus(a), needs, None)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        let needs = self.needs(a);
        self.push(v, Op::Exp(a), needs, None)
    }

    /// Wraps every entry into `(-π, π]`; gradient passes through unchanged.
    pub fn wrap_to_pi(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(wrap_angle);
        let needs = self.needs(a);
        self.push(v, Op::WrapToPi(a), needs, None)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        let needs = self.needs(a);
        self.push(v, Op::SumAll(a), needs, None)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel() as f64;
        let v = Tensor::scalar(self.value(a).data().iter().sum::<f64>() / n);
        let needs = self.needs(a);
        self.push(v, Op::MeanAll(a), needs, None)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, NnError> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(NnError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            cols += self.value(p).cols();
        }
        let mut out = Tensor::zeros(&[rows, cols]);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            let pc = pv.cols();
            for r in 0..rows {
                let src = pv.row(r);
                let dst = &mut out.data_mut()[r * cols + offset..r * cols + offset + pc];
                dst.copy_from_slice(src);
            }
            offset += pc;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), needs, None))
    }

    pub fn slice_cols(&mut self, a: NodeId, lo: usize, hi: usize) -> Result<NodeId, NnError> {
        let x = self.value(a);
        if hi > x.cols() || lo >= hi {
            return Err(NnError::ShapeMismatch {
                op: "slice_cols",
                lhs: x.shape().to_vec(),
                rhs: vec![lo, hi],
            });
        }
        let rows = x.rows();
        let cols = x.cols();
        let mut out = Tensor::zeros(&[rows, hi - lo]);
        for r in 0..rows {
            let src = &x.data()[r * cols + lo..r * cols + hi];
            out.data_mut()[r * (hi - lo)..(r + 1) * (hi - lo)].copy_from_slice(src);
        }
        let needs = self.needs(a);
        Ok(self.push(out, Op::SliceCols { x: a, lo, hi }, needs, None))
    }

    /// Gathers rows of a table: `out[i, :] = table[idx[i], :]`.
    pub fn gather_rows(&mut self, table: NodeId, idx: &[usize]) -> Result<NodeId, NnError> {
        let t = self.value(table);
        let cols = t.cols();
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(NnError::ShapeMismatch {
                op: "gather_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![bad],
            });
        }
        let mut out = Tensor::zeros(&[idx.len(), cols]);
        for (r, &i) in idx.iter().enumerate() {
            out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(t.row(i));
        }
        let needs = self.needs(table);
        Ok(self.push(out, Op::GatherRows { table, idx: idx.to_vec() }, needs, None))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`.
    pub fn cross_entropy_rows(
        &mut self,
        logits: NodeId,
        targets: &[usize],
    ) -> Result<NodeId, NnError> {
        let x = self.value(logits);
        let (rows, cols) = (x.rows(), x.cols());
        if targets.len() != rows || targets.iter().any(|&t| t >= cols) {
            return Err(NnError::ShapeMismatch {
                op: "cross_entropy_rows",
                lhs: x.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = Tensor::zeros(&[rows, cols]);
        let mut nll = 0.0;
        for r in 0..rows {
            let row = x.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs.data_mut()[r * cols + j] = e;
                sum += e;
            }
            for j in 0..cols {
                probs.data_mut()[r * cols + j] /= sum;
            }
            nll -= (row[targets[r]] - max - sum.ln()).min(0.0);
        }
        let v = Tensor::scalar(nll / rows as f64);
        let needs = self.needs(logits);
        Ok(self.push(
            v,
            Op::CrossEntropyRows { logits, targets: targets.to_vec() },
            needs,
            Some(probs),
        ))
    }

    /// Reverse pass from a scalar root. Gradients accumulate onto every node
    /// that (transitively) requires them.
    pub fn backward(&mut self, root: NodeId) -> Result<(), NnError> {
        if root.0 >= self.nodes.len() {
            return Err(NnError::StaleTape);
        }
        if !self.nodes[root.0].value.is_scalar() {
            return Err(NnError::NotScalar(self.nodes[root.0].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = grads[i].take().unwrap();
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let accum = |grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor| {
            match &mut grads[id.0] {
                Some(existing) => existing.axpy(1.0, &delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.needs(*a) {
                    let mut da = Tensor::zeros(&[m, k]);
                    matmul_nt_into(g.data(), bv.data(), da.data_mut(), m, n, k);
                    accum(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(&[k, n]);
                    matmul_tn_into(av.data(), g.data(), db.data_mut(), k, m, n);
                    accum(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                if self.needs(*a) {
                    accum(grads, *a, g.transpose());
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accum(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    accum(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accum(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    accum(grads, *b, g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    accum(grads, *a, g.mul(&self.nodes[b.0].value).unwrap());
                }
                if self.needs(*b) {
                    accum(grads, *b, g.mul(&self.nodes[a.0].value).unwrap());
                }
            }
            Op::AddRow(x, row) => {
                if self.needs(*x) {
                    accum(grads, *x, g.clone());
                }
                if self.needs(*row) {
                    let rv = &self.nodes[row.0].value;
                    let mut dr = Tensor::zeros(rv.shape());
                    for r in 0..g.rows() {
                        for (o, &gv) in dr.data_mut().iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                    accum(grads, *row, dr);
                }
            }
            Op::MulRow(x, row) => {
                let rv = &self.nodes[row.0].value;
                let xv = &self.nodes[x.0].value;
                if self.needs(*x) {
                    let cols = g.cols();
                    let mut dx = g.clone();
                    for r in 0..dx.rows() {
                        let slice = &mut dx.data_mut()[r * cols..(r + 1) * cols];
                        for (o, &b) in slice.iter_mut().zip(rv.data()) {
                            *o *= b;
                        }
                    }
                    accum(grads, *x, dx);
                }
                if self.needs(*row) {
                    let mut dr = Tensor::zeros(rv.shape());
                    for r in 0..g.rows() {
                        for ((o, &gv), &xvv) in
                            dr.data_mut().iter_mut().zip(g.row(r)).zip(xv.row(r))
                        {
                            *o += gv * xvv;
                        }
                    }
                    accum(grads, *row, dr);
                }
            }
            Op::Scale(a, s) => {
                if self.needs(*a) {
                    accum(grads, *a, g.scale(*s));
                }
            }
            Op::AddScalar(a) => {
                if self.needs(*a) {
                    accum(grads, *a, g.clone());
                }
            }
            Op::Softmax(a) => {
                if self.needs(*a) {
                    let s = &node.value;
                    let cols = s.cols();
                    let mut dx = Tensor::zeros(s.shape());
                    for r in 0..s.rows() {
                        let srow = s.row(r);
                        let grow = g.row(r);
                        let dot: f64 = srow.iter().zip(grow).map(|(&sv, &gv)| sv * gv).sum();
                        let drow = &mut dx.data_mut()[r * cols..(r + 1) * cols];
                        for ((o, &sv), &gv) in drow.iter_mut().zip(srow).zip(grow) {
                            *o = sv * (gv - dot);
                        }
                    }
                    accum(grads, *a, dx);
                }
            }
            Op::LayerNorm(a) => {
                if self.needs(*a) {
                    let y = &node.value;
                    let inv_std = node.ctx.as_ref().unwrap();
                    let cols = y.cols();
                    let mut dx = Tensor::zeros(y.shape());
                    for r in 0..y.rows() {
                        let yrow = y.row(r);
                        let grow = g.row(r);
                        let gmean = grow.iter().sum::<f64>() / cols as f64;
                        let gydot =
                            yrow.iter().zip(grow).map(|(&yv, &gv)| yv * gv).sum::<f64>()
                                / cols as f64;
                        let istd = inv_std.data()[r];
                        let drow = &mut dx.data_mut()[r * cols..(r + 1) * cols];
                        for ((o, &yv), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                            *o = istd * (gv - gmean - yv * gydot);
                        }
                    }
                    accum(grads, *a, dx);
                }
            }
            Op::Relu(a) => {
                if self.needs(*a) {
                    let x = &self.nodes[a.0].value;
                    let dx = Tensor::new(
                        x.shape().to_vec(),
                        x.data()
                            .iter()
                            .zip(g.data())
                            .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                            .collect(),
                    )
                    .unwrap();
                    accum(grads, *a, dx);
                }
            }
            Op::Gelu(a) => {
                if self.needs(*a) {
                    let x = &self.nodes[a.0].value;
                    let dx = Tensor::new(
                        x.shape().to_vec(),
                        x.data()
                            .iter()
                            .zip(g.data())
                            .map(|(&xv, &gv)| gv * gelu_grad(xv))
                            .collect(),
                    )
                    .unwrap();
                    accum(grads, *a, dx);
                }
            }
            Op::Tanh(a) => {
                if self.needs(*a) {
                    let y = &node.value;
                    let dx = Tensor::new(
                        y.shape().to_vec(),
                        y.data()
                            .iter()
                            .zip(g.data())
                            .map(|(&yv, &gv)| gv * (1.0 - yv * yv))
                            .collect(),
                    )
                    .unwrap();
                    accum(grads, *a, dx);
                }
            }
            Op::Softplus(a) => {
                if self.needs(*a) {
                    let x = &self.nodes[a.0].value;
                    let dx = Tensor::new(
                        x.shape().to_vec(),
                        x.data()
                            .iter()
                            .zip(g.data())
                            .map(|(&xv, &gv)| gv * sigmoid(xv))
                            .collect(),
                    )
                    .unwrap();
                    accum(grads, *a, dx);
                }
            }
            Op::Exp(a) => {
                if self.needs(*a) {
                    accum(grads, *a, g.mul(&node.value).unwrap());
                }
            }
            Op::WrapToPi(a) => {
                if self.needs(*a) {
                    accum(grads, *a, g.clone());
                }
            }
            Op::SumAll(a) => {
                if self.needs(*a) {
                    let x = &self.nodes[a.0].value;
                    accum(grads, *a, Tensor::full(x.shape(), g.item()));
                }
            }
            Op::MeanAll(a) => {
                if self.needs(*a) {
                    let x = &self.nodes[a.0].value;
                    accum(grads, *a, Tensor::full(x.shape(), g.item() / x.numel() as f64));
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                let cols = node.value.cols();
                for &p in parts {
                    let pv = &self.nodes[p.0].value;
                    let pc = pv.cols();
                    if self.needs(p) {
                        let mut dp = Tensor::zeros(pv.shape());
                        for r in 0..pv.rows() {
                            let src = &g.data()[r * cols + offset..r * cols + offset + pc];
                            dp.data_mut()[r * pc..(r + 1) * pc].copy_from_slice(src);
                        }
                        accum(grads, p, dp);
                    }
                    offset += pc;
                }
            }
            Op::SliceCols { x, lo, hi } => {
                if self.needs(*x) {
                    let xv = &self.nodes[x.0].value;
                    let cols = xv.cols();
                    let w = hi - lo;
                    let mut dx = Tensor::zeros(xv.shape());
                    for r in 0..xv.rows() {
                        let dst = &mut dx.data_mut()[r * cols + lo..r * cols + hi];
                        dst.copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                    }
                    accum(grads, *x, dx);
                }
            }
            Op::GatherRows { table, idx } => {
                if self.needs(*table) {
                    let tv = &self.nodes[table.0].value;
                    let cols = tv.cols();
                    let mut dt = Tensor::zeros(tv.shape());
                    for (r, &i) in idx.iter().enumerate() {
                        let dst = &mut dt.data_mut()[i * cols..(i + 1) * cols];
                        for (o, &gv) in dst.iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                    accum(grads, *table, dt);
                }
            }
            Op::CrossEntropyRows { logits, targets } => {
                if self.needs(*logits) {
                    let probs = node.ctx.as_ref().unwrap();
                    let mut dx = probs.clone();
                    let (rows, cols) = (dx.rows(), dx.cols());
                    let scale = g.item() / rows as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        dx.data_mut()[r * cols + t] -= 1.0;
                    }
                    accum(grads, *logits, dx.scale(scale));
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    let u = (2.0 / std::f64::consts::PI).sqrt() * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    let u = k * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * k * (1.0 + 3.0 * GELU_C * x * x)
}

/// Lower-triangular additive attention mask: 0 on and below the diagonal, a
/// large negative penalty above it.
pub(crate) fn causal_mask(len: usize) -> Tensor {
    let mut m = Tensor::zeros(&[len, len]);
    for i in 0..len {
        for j in (i + 1)..len {
            m.data_mut()[i * len + j] = -1e30;
        }
    }
    m
}
