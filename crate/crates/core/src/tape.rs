//! Reverse-mode differentiation on a define-by-run tape.
//!
//! Every operation appends one node holding its forward value; ids are
//! strictly increasing, so the node list is already topologically ordered
//! and a single reverse sweep visits each node exactly once. The tape is
//! rebuilt per forward pass; nothing is cached across passes.

use std::rc::Rc;

use crate::error::{CoreError, Result};
use crate::graph::NormalizedAdjacency;
use crate::tensor::{self, Tensor, CLAMP_FLOOR};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    /// Differentiable input; its gradient is retained by `backward`.
    Leaf,
    /// Non-differentiable input; gradient accumulation into it is dropped.
    Constant,
    Matmul { a: Var, b: Var },
    MatmulNt { a: Var, b: Var },
    Spmm { adj: Rc<NormalizedAdjacency>, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Hadamard { a: Var, b: Var },
    Scale { a: Var, k: f64 },
    AddScalar { a: Var },
    AddRowBroadcast { a: Var, bias: Var },
    Relu { a: Var },
    Exp { a: Var },
    LnClamped { a: Var },
    RowSoftmax { a: Var },
    LogsumexpRow { a: Var },
    WeightedLogsumexpRow { x: Var, w: Var },
    RowSum { a: Var },
    ReduceMean { a: Var },
    ReduceSum { a: Var },
    TakeDiag { a: Var },
    RowNorms { a: Var },
    DivRows { a: Var, s: Var },
    ConcatRowsPairwise { u: Var, v: Var },
    Reshape { a: Var },
    PairScoreMlp(Box<PairScoreMlpInputs>),
}

#[derive(Debug)]
struct PairScoreMlpInputs {
    u: Var,
    v: Var,
    l1: Var,
    b1: Var,
    l2: Var,
    b2: Var,
    l3: Var,
    b3: Var,
    block_rows: usize,
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of a scalar loss with respect to tape nodes.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; a zero tensor when `v` did not participate in the
    /// loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

/// Reverse-mode tape.
pub struct Tape {
    nodes: Vec<Node>,
    checked: bool,
    clamp_events: usize,
    norm_clamp_events: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            checked: false,
            clamp_events: 0,
            norm_clamp_events: 0,
        }
    }

    /// A tape that rejects non-finite op outputs with a numeric error.
    pub fn checked() -> Self {
        Tape {
            checked: true,
            ..Tape::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Probability-clamp events observed by `ln_clamped` so far.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    /// Zero-norm rows clamped by `row_norms` so far.
    pub fn norm_clamp_events(&self) -> usize {
        self.norm_clamp_events
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(CoreError::Numeric(format!(
                "non-finite value produced by {op:?}"
            )));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Constant,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        self.push(v, Op::Matmul { a, b })
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul_nt(self.value(a), self.value(b))?;
        self.push(v, Op::MatmulNt { a, b })
    }

    /// Sparse normalized adjacency times dense; the sparse side is a
    /// constant, never differentiated.
    pub fn spmm(&mut self, adj: &Rc<NormalizedAdjacency>, b: Var) -> Result<Var> {
        let v = adj.mul_dense(self.value(b))?;
        self.push(
            v,
            Op::Spmm {
                adj: Rc::clone(adj),
                b,
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::add(self.value(a), self.value(b))?;
        self.push(v, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        self.push(v, Op::Sub { a, b })
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::hadamard(self.value(a), self.value(b))?;
        self.push(v, Op::Hadamard { a, b })
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let v = tensor::scale(self.value(a), k);
        self.push(v, Op::Scale { a, k })
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        let v = tensor::add_scalar(self.value(a), k);
        self.push(v, Op::AddScalar { a })
    }

    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Result<Var> {
        let v = tensor::add_row_broadcast(self.value(a), self.value(bias))?;
        self.push(v, Op::AddRowBroadcast { a, bias })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = tensor::relu(self.value(a));
        self.push(v, Op::Relu { a })
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = tensor::exp(self.value(a));
        self.push(v, Op::Exp { a })
    }

    /// Natural log with inputs clamped at 1e-12; clamp events are counted.
    pub fn ln_clamped(&mut self, a: Var) -> Result<Var> {
        let (v, clamps) = tensor::ln_clamped(self.value(a));
        self.clamp_events += clamps;
        self.push(v, Op::LnClamped { a })
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let v = tensor::row_softmax(self.value(a));
        self.push(v, Op::RowSoftmax { a })
    }

    pub fn logsumexp_row(&mut self, a: Var) -> Result<Var> {
        let v = tensor::logsumexp_row(self.value(a));
        self.push(v, Op::LogsumexpRow { a })
    }

    pub fn weighted_logsumexp_row(&mut self, x: Var, w: Var) -> Result<Var> {
        let v = tensor::weighted_logsumexp_row(self.value(x), self.value(w))?;
        self.push(v, Op::WeightedLogsumexpRow { x, w })
    }

    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let v = tensor::row_sum(self.value(a));
        self.push(v, Op::RowSum { a })
    }

    pub fn reduce_mean(&mut self, a: Var) -> Result<Var> {
        let v = tensor::reduce_mean(self.value(a));
        self.push(v, Op::ReduceMean { a })
    }

    pub fn reduce_sum(&mut self, a: Var) -> Result<Var> {
        let v = tensor::reduce_sum(self.value(a));
        self.push(v, Op::ReduceSum { a })
    }

    pub fn take_diag(&mut self, a: Var) -> Result<Var> {
        let v = tensor::take_diag(self.value(a))?;
        self.push(v, Op::TakeDiag { a })
    }

    /// Row Euclidean norms, clamped at 1e-12 with a warning counter.
    pub fn row_norms(&mut self, a: Var) -> Result<Var> {
        let (v, clamps) = tensor::row_norms_clamped(self.value(a));
        self.norm_clamp_events += clamps;
        self.push(v, Op::RowNorms { a })
    }

    pub fn div_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let v = tensor::div_rows(self.value(a), self.value(s))?;
        self.push(v, Op::DivRows { a, s })
    }

    pub fn concat_rows_pairwise(&mut self, u: Var, v: Var) -> Result<Var> {
        let out = tensor::concat_rows_pairwise(self.value(u), self.value(v))?;
        self.push(out, Op::ConcatRowsPairwise { u, v })
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(a).reshaped(rows, cols)?;
        self.push(v, Op::Reshape { a })
    }

    /// Row-normalized cosine similarity matrix between the rows of `u` and
    /// `v`, composed from primitive ops so it is differentiable end to end.
    pub fn cosine_similarity_matrix(&mut self, u: Var, v: Var) -> Result<Var> {
        let un = self.row_norms(u)?;
        let vn = self.row_norms(v)?;
        let uhat = self.div_rows(u, un)?;
        let vhat = self.div_rows(v, vn)?;
        self.matmul_nt(uhat, vhat)
    }

    /// Scores of all ordered row pairs of (u, v) through a two-hidden-layer
    /// rectifier MLP, computed `block_rows` pair rows at a time. The forward
    /// never materializes the full pair batch and the backward recomputes
    /// activations blockwise, so peak memory stays bounded by the block.
    #[allow(clippy::too_many_arguments)]
    pub fn pair_score_mlp(
        &mut self,
        u: Var,
        v: Var,
        l1: Var,
        b1: Var,
        l2: Var,
        b2: Var,
        l3: Var,
        b3: Var,
        block_rows: usize,
    ) -> Result<Var> {
        let out = pair_mlp_forward(
            self.value(u),
            self.value(v),
            self.value(l1),
            self.value(b1),
            self.value(l2),
            self.value(b2),
            self.value(l3),
            self.value(b3),
            block_rows,
        )?;
        self.push(
            out,
            Op::PairScoreMlp(Box::new(PairScoreMlpInputs {
                u,
                v,
                l1,
                b1,
                l2,
                b2,
                l3,
                b3,
                block_rows,
            })),
        )
    }

    /// Gradients of a scalar loss node with respect to every leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.shape() != (1, 1) {
            return Err(CoreError::Contract(format!(
                "backward requires a scalar loss, got {}x{}",
                loss_value.rows(),
                loss_value.cols()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(grad);
                    continue;
                }
                Op::Constant => continue,
                Op::Matmul { a, b } => {
                    let da = tensor::matmul_nt(&grad, self.value(*b))?;
                    let db = tensor::matmul_tn(self.value(*a), &grad)?;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatmulNt { a, b } => {
                    let da = tensor::matmul(&grad, self.value(*b))?;
                    let db = tensor::matmul_tn(&grad, self.value(*a))?;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Spmm { adj, b } => {
                    let db = adj.mul_dense_transpose(&grad)?;
                    acc(&mut grads, *b, db);
                }
                Op::Add { a, b } => {
                    acc(&mut grads, *a, grad.clone());
                    acc(&mut grads, *b, grad);
                }
                Op::Sub { a, b } => {
                    acc(&mut grads, *a, grad.clone());
                    acc(&mut grads, *b, tensor::scale(&grad, -1.0));
                }
                Op::Hadamard { a, b } => {
                    let da = tensor::hadamard(&grad, self.value(*b))?;
                    let db = tensor::hadamard(&grad, self.value(*a))?;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Scale { a, k } => {
                    acc(&mut grads, *a, tensor::scale(&grad, *k));
                }
                Op::AddScalar { a } => {
                    acc(&mut grads, *a, grad);
                }
                Op::AddRowBroadcast { a, bias } => {
                    acc(&mut grads, *bias, tensor::col_sum(&grad));
                    acc(&mut grads, *a, grad);
                }
                Op::Relu { a } => {
                    let input = self.value(*a);
                    let mut da = grad;
                    for (g, x) in da.values_mut().iter_mut().zip(input.values()) {
                        if *x <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Exp { a } => {
                    let da = tensor::hadamard(&grad, &node.value)?;
                    acc(&mut grads, *a, da);
                }
                Op::LnClamped { a } => {
                    let input = self.value(*a);
                    let mut da = grad;
                    for (g, x) in da.values_mut().iter_mut().zip(input.values()) {
                        if *x < CLAMP_FLOOR {
                            *g = 0.0;
                        } else {
                            *g /= *x;
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::RowSoftmax { a } => {
                    // dx = y .* (dy - <dy, y>) per row.
                    let y = &node.value;
                    let mut da = grad;
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = da.row_mut(r);
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for (g, y) in gr.iter_mut().zip(yr) {
                            *g = y * (*g - dot);
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::LogsumexpRow { a } => {
                    let x = self.value(*a);
                    let p = tensor::row_softmax(x);
                    let mut da = p;
                    for r in 0..da.rows() {
                        let g = grad.at(r, 0);
                        for v in da.row_mut(r) {
                            *v *= g;
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::WeightedLogsumexpRow { x, w } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let out = &node.value;
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    let mut dw = Tensor::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let g = grad.at(r, 0);
                        let o = out.at(r, 0);
                        let xr = xv.row(r);
                        let wr = wv.row(r);
                        let dxr = dx.row_mut(r);
                        for ((dxe, &xe), &we) in dxr.iter_mut().zip(xr).zip(wr) {
                            let e = (xe - o).exp();
                            *dxe = g * we * e;
                        }
                        let dwr = dw.row_mut(r);
                        for (dwe, &xe) in dwr.iter_mut().zip(xr) {
                            *dwe = g * (xe - o).exp();
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                }
                Op::RowSum { a } => {
                    let input = self.value(*a);
                    let mut da = Tensor::zeros(input.rows(), input.cols());
                    for r in 0..input.rows() {
                        let g = grad.at(r, 0);
                        for v in da.row_mut(r) {
                            *v = g;
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::ReduceMean { a } => {
                    let input = self.value(*a);
                    let g = grad.item()? / input.len() as f64;
                    acc(&mut grads, *a, Tensor::filled(input.rows(), input.cols(), g));
                }
                Op::ReduceSum { a } => {
                    let input = self.value(*a);
                    let g = grad.item()?;
                    acc(&mut grads, *a, Tensor::filled(input.rows(), input.cols(), g));
                }
                Op::TakeDiag { a } => {
                    let input = self.value(*a);
                    let mut da = Tensor::zeros(input.rows(), input.cols());
                    for i in 0..input.rows() {
                        da.set(i, i, grad.at(i, 0));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::RowNorms { a } => {
                    let input = self.value(*a);
                    let out = &node.value;
                    let mut da = Tensor::zeros(input.rows(), input.cols());
                    for r in 0..input.rows() {
                        let raw: f64 = input.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
                        if raw < CLAMP_FLOOR {
                            continue; // clamped region is locally constant
                        }
                        let g = grad.at(r, 0) / out.at(r, 0);
                        for (d, x) in da.row_mut(r).iter_mut().zip(input.row(r)) {
                            *d = g * x;
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::DivRows { a, s } => {
                    let sv = self.value(*s);
                    let out = &node.value;
                    let mut da = grad.clone();
                    let mut ds = Tensor::zeros(sv.rows(), 1);
                    for r in 0..da.rows() {
                        let denom = sv.at(r, 0);
                        let mut dot = 0.0;
                        for (d, c) in da.row_mut(r).iter_mut().zip(out.row(r)) {
                            dot += *d * *c;
                            *d /= denom;
                        }
                        ds.set(r, 0, -dot / denom);
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *s, ds);
                }
                Op::ConcatRowsPairwise { u, v } => {
                    let uv = self.value(*u);
                    let vv = self.value(*v);
                    let n = uv.rows();
                    let (du_cols, dv_cols) = (uv.cols(), vv.cols());
                    let mut du = Tensor::zeros(n, du_cols);
                    let mut dv = Tensor::zeros(n, dv_cols);
                    for i in 0..n {
                        for j in 0..n {
                            let row = grad.row(i * n + j);
                            for (d, g) in du.row_mut(i).iter_mut().zip(&row[..du_cols]) {
                                *d += g;
                            }
                            for (d, g) in dv.row_mut(j).iter_mut().zip(&row[du_cols..]) {
                                *d += g;
                            }
                        }
                    }
                    acc(&mut grads, *u, du);
                    acc(&mut grads, *v, dv);
                }
                Op::Reshape { a } => {
                    let input = self.value(*a);
                    let da = grad.reshaped(input.rows(), input.cols())?;
                    acc(&mut grads, *a, da);
                }
                Op::PairScoreMlp(inputs) => {
                    let g = pair_mlp_backward(
                        self.value(inputs.u),
                        self.value(inputs.v),
                        self.value(inputs.l1),
                        self.value(inputs.b1),
                        self.value(inputs.l2),
                        self.value(inputs.b2),
                        self.value(inputs.l3),
                        &grad,
                        inputs.block_rows,
                    )?;
                    acc(&mut grads, inputs.u, g.du);
                    acc(&mut grads, inputs.v, g.dv);
                    acc(&mut grads, inputs.l1, g.dl1);
                    acc(&mut grads, inputs.b1, g.db1);
                    acc(&mut grads, inputs.l2, g.dl2);
                    acc(&mut grads, inputs.b2, g.db2);
                    acc(&mut grads, inputs.l3, g.dl3);
                    acc(&mut grads, inputs.b3, g.db3);
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn acc(grads: &mut [Option<Tensor>], target: Var, delta: Tensor) {
    match &mut grads[target.0] {
        Some(existing) => {
            for (e, d) in existing.values_mut().iter_mut().zip(delta.values()) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

/// Splits `l1` (2d x h) into the rows applied to `u` and the rows applied
/// to `v`.
fn split_l1(l1: &Tensor, d: usize) -> (Tensor, Tensor) {
    let h = l1.cols();
    let mut top = Tensor::zeros(d, h);
    let mut bot = Tensor::zeros(d, h);
    for r in 0..d {
        top.row_mut(r).copy_from_slice(l1.row(r));
        bot.row_mut(r).copy_from_slice(l1.row(d + r));
    }
    (top, bot)
}

#[allow(clippy::too_many_arguments)]
fn pair_mlp_forward(
    u: &Tensor,
    v: &Tensor,
    l1: &Tensor,
    b1: &Tensor,
    l2: &Tensor,
    b2: &Tensor,
    l3: &Tensor,
    b3: &Tensor,
    block_rows: usize,
) -> Result<Tensor> {
    let (n, d) = u.shape();
    if v.shape() != (n, d) {
        return Err(CoreError::Shape(format!(
            "pair_score_mlp: u {}x{} vs v {}x{}",
            n,
            d,
            v.rows(),
            v.cols()
        )));
    }
    if l1.rows() != 2 * d {
        return Err(CoreError::Shape(format!(
            "pair_score_mlp: l1 has {} rows for pair width {}",
            l1.rows(),
            2 * d
        )));
    }
    let h = l1.cols();
    if b1.shape() != (1, h) || l2.shape() != (h, h) || b2.shape() != (1, h) {
        return Err(CoreError::Shape("pair_score_mlp: hidden shapes disagree".into()));
    }
    if l3.shape() != (h, 1) || b3.shape() != (1, 1) {
        return Err(CoreError::Shape("pair_score_mlp: output shapes disagree".into()));
    }
    let block = block_rows.max(1);

    let (l1_top, l1_bot) = split_l1(l1, d);
    // Precontract so each pair row is just a_row(i) + b_row(j) + b1.
    let ua = tensor::matmul(u, &l1_top)?;
    let vb = tensor::matmul(v, &l1_bot)?;
    let bias3 = b3.at(0, 0);

    let total = n * n;
    let mut scores = Tensor::zeros(n, n);
    let mut z1 = Tensor::zeros(block.min(total), h);
    let mut z2 = Tensor::zeros(block.min(total), h);
    let mut start = 0usize;
    while start < total {
        let end = (start + block).min(total);
        let rows = end - start;
        fill_z1_block(&mut z1, &ua, &vb, b1, start, end, n);
        matmul_into(&mut z2, rows, &z1, l2)?;
        for r in 0..rows {
            for (z, &b) in z2.row_mut(r).iter_mut().zip(b2.row(0)) {
                let pre = *z + b;
                *z = if pre > 0.0 { pre } else { 0.0 };
            }
        }
        for (r, p) in (start..end).enumerate() {
            let mut s = bias3;
            for (z, w) in z2.row(r).iter().zip(l3.values()) {
                s += z * w;
            }
            scores.set(p / n, p % n, s);
        }
        start = end;
    }
    Ok(scores)
}

/// Rectified first-layer activations for pair rows [start, end): row p maps
/// to pair (p / n, p % n) and is `relu(ua_i + vb_j + b1)`.
fn fill_z1_block(
    z1: &mut Tensor,
    ua: &Tensor,
    vb: &Tensor,
    b1: &Tensor,
    start: usize,
    end: usize,
    n: usize,
) {
    for p in start..end {
        let (i, j) = (p / n, p % n);
        let row = z1.row_mut(p - start);
        for (((z, &a), &b), &c) in row
            .iter_mut()
            .zip(ua.row(i))
            .zip(vb.row(j))
            .zip(b1.row(0))
        {
            let pre = a + b + c;
            *z = if pre > 0.0 { pre } else { 0.0 };
        }
    }
}

/// `out[..rows] = a[..rows] * b`, reusing the output buffer.
fn matmul_into(out: &mut Tensor, rows: usize, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.cols() != b.rows() || out.cols() != b.cols() {
        return Err(CoreError::Shape(format!(
            "matmul_into: {}x{} * {}x{} -> {}x{}",
            rows,
            a.cols(),
            b.rows(),
            b.cols(),
            rows,
            out.cols()
        )));
    }
    for i in 0..rows {
        let a_row = a.row(i);
        let out_row = out.row_mut(i);
        out_row.fill(0.0);
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = b.row(k);
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(())
}

struct PairMlpGrads {
    du: Tensor,
    dv: Tensor,
    dl1: Tensor,
    db1: Tensor,
    dl2: Tensor,
    db2: Tensor,
    dl3: Tensor,
    db3: Tensor,
}

/// Blockwise backward pass for `pair_mlp_forward`; activations are
/// recomputed per block rather than stored.
#[allow(clippy::too_many_arguments)]
fn pair_mlp_backward(
    u: &Tensor,
    v: &Tensor,
    l1: &Tensor,
    b1: &Tensor,
    l2: &Tensor,
    b2: &Tensor,
    l3: &Tensor,
    dscores: &Tensor,
    block_rows: usize,
) -> Result<PairMlpGrads> {
    let (n, d) = u.shape();
    let h = l1.cols();
    let block = block_rows.max(1);

    let (l1_top, l1_bot) = split_l1(l1, d);
    let ua = tensor::matmul(u, &l1_top)?;
    let vb = tensor::matmul(v, &l1_bot)?;

    let mut dua = Tensor::zeros(n, h);
    let mut dvb = Tensor::zeros(n, h);
    let mut db1 = Tensor::zeros(1, h);
    let mut dl2 = Tensor::zeros(h, h);
    let mut db2 = Tensor::zeros(1, h);
    let mut dl3 = Tensor::zeros(h, 1);
    let mut db3 = 0.0;

    let total = n * n;
    let buf_rows = block.min(total);
    let mut z1 = Tensor::zeros(buf_rows, h);
    let mut z2 = Tensor::zeros(buf_rows, h);
    let mut dpre2 = Tensor::zeros(buf_rows, h);
    let mut dpre1 = Tensor::zeros(buf_rows, h);
    let mut start = 0usize;
    while start < total {
        let end = (start + block).min(total);
        let rows = end - start;

        // Recompute z1, z2 for this block.
        fill_z1_block(&mut z1, &ua, &vb, b1, start, end, n);
        matmul_into(&mut z2, rows, &z1, l2)?;
        for r in 0..rows {
            for (z, &b) in z2.row_mut(r).iter_mut().zip(b2.row(0)) {
                let pre = *z + b;
                *z = if pre > 0.0 { pre } else { 0.0 };
            }
        }

        // dpre2 = (ds * l3^T) masked by z2 > 0.
        for (r, p) in (start..end).enumerate() {
            let g = dscores.at(p / n, p % n);
            db3 += g;
            let z2r = z2.row(r);
            for ((dp, &z), w) in dpre2.row_mut(r).iter_mut().zip(z2r).zip(l3.values()) {
                *dp = if z > 0.0 { g * w } else { 0.0 };
            }
            for (dl, &z) in dl3.values_mut().iter_mut().zip(z2r) {
                *dl += g * z;
            }
        }
        for r in 0..rows {
            for (db, dp) in db2.values_mut().iter_mut().zip(dpre2.row(r)) {
                *db += dp;
            }
        }

        // dl2 += z1^T dpre2; dpre1 = (dpre2 l2^T) masked by z1 > 0.
        for r in 0..rows {
            let dp2 = dpre2.row(r);
            for (k, &zv) in z1.row(r).iter().enumerate() {
                if zv == 0.0 {
                    continue;
                }
                for (o, &g) in dl2.row_mut(k).iter_mut().zip(dp2) {
                    *o += zv * g;
                }
            }
        }
        for r in 0..rows {
            // Row r of dpre2 times l2^T, masked by z1 > 0.
            let dp2 = dpre2.row(r);
            let out = dpre1.row_mut(r);
            for (j, o) in out.iter_mut().enumerate() {
                if z1.at(r, j) <= 0.0 {
                    *o = 0.0;
                    continue;
                }
                let mut acc = 0.0;
                for (&g, &w) in dp2.iter().zip(l2.row(j)) {
                    acc += g * w;
                }
                *o = acc;
            }
        }

        for (r, p) in (start..end).enumerate() {
            let (i, j) = (p / n, p % n);
            let dprow = dpre1.row(r);
            for (a, g) in dua.row_mut(i).iter_mut().zip(dprow) {
                *a += g;
            }
            for (a, g) in dvb.row_mut(j).iter_mut().zip(dprow) {
                *a += g;
            }
            for (a, g) in db1.values_mut().iter_mut().zip(dprow) {
                *a += g;
            }
        }
        start = end;
    }

    // Pull the precontraction back onto the raw inputs.
    let du = tensor::matmul_nt(&dua, &l1_top)?;
    let dv = tensor::matmul_nt(&dvb, &l1_bot)?;
    let dl1_top = tensor::matmul_tn(u, &dua)?;
    let dl1_bot = tensor::matmul_tn(v, &dvb)?;
    let mut dl1 = Tensor::zeros(2 * d, h);
    for r in 0..d {
        dl1.row_mut(r).copy_from_slice(dl1_top.row(r));
        dl1.row_mut(d + r).copy_from_slice(dl1_bot.row(r));
    }

    Ok(PairMlpGrads {
        du,
        dv,
        dl1,
        db1,
        dl2,
        db2,
        dl3,
        db3: Tensor::scalar(db3),
    })
}
