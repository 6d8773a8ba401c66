use std::ops::Deref;

use super::kernels::{dot, gemm_acc, gemm_nt_acc, gemm_tn_acc, log_sum_exp, sigmoid};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate backward-pass defects, used to prove the gradient checker
/// catches them.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Negates the gradient flowing into the bilinear attention matrix.
    FlipAttentionWeightGrad,
}

enum Value<'t> {
    Owned(Vec<f64>),
    Borrowed(&'t [f64]),
}

impl Deref for Value<'_> {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        match self {
            Value::Owned(v) => v,
            Value::Borrowed(s) => s,
        }
    }
}

enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    OneMinus(usize),
    Concat {
        parts: Vec<usize>,
        outer: usize,
        chunks: Vec<usize>,
    },
    Softmax(usize),
    Row {
        m: usize,
        index: usize,
        cols: usize,
    },
    GatherRows {
        m: usize,
        ids: Vec<usize>,
        cols: usize,
    },
    StackRows {
        rows: Vec<usize>,
        cols: usize,
    },
    Sum(usize),
    BilinearScores {
        context: usize,
        w: usize,
        hidden: usize,
        query: Vec<f64>,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
        cols: usize,
    },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::OneMinus(a)
            | Op::Softmax(a)
            | Op::Sum(a) => vec![*a],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Row { m, .. } | Op::GatherRows { m, .. } => vec![*m],
            Op::StackRows { rows, .. } => rows.clone(),
            Op::BilinearScores {
                context, w, hidden, ..
            } => vec![*context, *w, *hidden],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node<'t> {
    value: Value<'t>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

/// Record-on-execute computation tape.
///
/// Leaves may borrow tensors for the tape's lifetime, so a forward pass
/// against shared parameters never copies them. A tape is single-threaded;
/// run one tape per worker.
#[derive(Default)]
pub struct Tape<'t> {
    nodes: Vec<Node<'t>>,
    faults: Vec<Fault>,
}

impl<'t> Tape<'t> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            faults: Vec::new(),
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.faults.push(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value<'t>, shape: Vec<usize>, op: Op) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_leaf(&mut self, value: Value<'t>, shape: Vec<usize>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            shape,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Borrows `tensor` as a leaf; it is differentiable iff the tensor
    /// requires grad.
    pub fn leaf(&mut self, tensor: &'t Tensor) -> Var {
        self.push_leaf(
            Value::Borrowed(tensor.data()),
            tensor.shape().to_vec(),
            tensor.requires_grad(),
        )
    }

    /// Borrows `tensor` as a differentiable leaf regardless of its flag.
    pub fn param(&mut self, tensor: &'t Tensor) -> Var {
        self.push_leaf(
            Value::Borrowed(tensor.data()),
            tensor.shape().to_vec(),
            true,
        )
    }

    /// Owned differentiable leaf.
    pub fn variable(&mut self, tensor: Tensor) -> Var {
        let shape = tensor.shape().to_vec();
        self.push_leaf(Value::Owned(tensor.into_data()), shape, true)
    }

    /// Owned non-differentiable leaf.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let shape = tensor.shape().to_vec();
        self.push_leaf(Value::Owned(tensor.into_data()), shape, false)
    }

    /// Borrowed non-differentiable leaf over a raw slice.
    pub fn constant_slice(&mut self, shape: &[usize], data: &'t [f64]) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::DataLength {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(self.push_leaf(Value::Borrowed(data), shape.to_vec(), false))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies a recorded value out as a fresh tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("tape shapes are consistent")
    }

    /// Matrix product. Rank-1 left operands act as row vectors and rank-1
    /// right operands as column vectors; the unit extent is dropped from the
    /// result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (m, k, out_shape) = match (sa.len(), sb.len()) {
            (1, 2) => (1, sa[0], vec![sb[1]]),
            (2, 2) => (sa[0], sa[1], vec![sa[0], sb[1]]),
            (2, 1) => (sa[0], sa[1], vec![sa[0]]),
            _ => return Err(Error::shape("matmul", &sa, &sb)),
        };
        let (kb, n) = if sb.len() == 2 {
            (sb[0], sb[1])
        } else {
            (sb[0], 1)
        };
        if k != kb {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(
            Value::Owned(out),
            out_shape,
            Op::MatMul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
        ))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Value::Owned(out), shape, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Value::Owned(out), shape, op)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| s * x, Op::Scale(a.0, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    /// 1 − a, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 - x, Op::OneMinus(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(Value::Owned(vec![s]), Vec::new(), Op::Sum(a.0))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = match parts.first() {
            Some(p) => self.shape(*p).to_vec(),
            None => return Err(Error::EmptyInput("concat")),
        };
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &first, s));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let chunks: Vec<usize> = parts.iter().map(|&p| self.shape(p)[axis] * inner).collect();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for (&p, &c) in parts.iter().zip(&chunks) {
                out.extend_from_slice(&self.value(p)[o * c..(o + 1) * c]);
            }
        }
        let op = Op::Concat {
            parts: parts.iter().map(|p| p.0).collect(),
            outer,
            chunks,
        };
        Ok(self.push(Value::Owned(out), out_shape, op))
    }

    /// Softmax over a vector with max subtraction. `mask[i] == true` excludes
    /// position `i`, which then receives exactly zero weight.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 1 {
            return Err(Error::shape("softmax", &shape, &[]));
        }
        if let Some(m) = mask {
            if m.len() != shape[0] {
                return Err(Error::shape("softmax", &shape, &[m.len()]));
            }
        }
        let out = softmax_values(self.value(x), mask)?;
        Ok(self.push(Value::Owned(out), shape, Op::Softmax(x.0)))
    }

    /// Row `index` of a matrix.
    pub fn row(&mut self, m: Var, index: usize) -> Result<Var> {
        let shape = self.shape(m).to_vec();
        if shape.len() != 2 || index >= shape[0] {
            return Err(Error::shape("row", &shape, &[index]));
        }
        let cols = shape[1];
        let out = self.value(m)[index * cols..(index + 1) * cols].to_vec();
        Ok(self.push(
            Value::Owned(out),
            vec![cols],
            Op::Row {
                m: m.0,
                index,
                cols,
            },
        ))
    }

    /// Embedding-style lookup of matrix rows.
    pub fn gather_rows(&mut self, m: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(m).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape("gather_rows", &shape, &[]));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::TokenOutOfRange {
                id: bad,
                vocab: rows,
            });
        }
        let src = self.value(m);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        Ok(self.push(
            Value::Owned(out),
            vec![ids.len(), cols],
            Op::GatherRows {
                m: m.0,
                ids: ids.to_vec(),
                cols,
            },
        ))
    }

    /// Stacks equal-length vectors as the leading rows of a
    /// `[total_rows × d]` matrix; remaining rows are zero.
    pub fn stack_rows(&mut self, rows: &[Var], total_rows: usize) -> Result<Var> {
        let cols = match rows.first() {
            Some(r) => self.shape(*r).to_vec(),
            None => return Err(Error::EmptyInput("stack_rows")),
        };
        if cols.len() != 1 || rows.len() > total_rows {
            return Err(Error::shape("stack_rows", &cols, &[rows.len(), total_rows]));
        }
        let cols = cols[0];
        let mut out = vec![0.0; total_rows * cols];
        for (i, &r) in rows.iter().enumerate() {
            if self.shape(r) != [cols] {
                return Err(Error::shape("stack_rows", &[cols], self.shape(r)));
            }
            out[i * cols..(i + 1) * cols].copy_from_slice(self.value(r));
        }
        let op = Op::StackRows {
            rows: rows.iter().map(|r| r.0).collect(),
            cols,
        };
        Ok(self.push(Value::Owned(out), vec![total_rows, cols], op))
    }

    /// score_i = contextᵀ · W · hidden_i for every row of `hidden`.
    pub fn bilinear_scores(&mut self, context: Var, w: Var, hidden: Var) -> Result<Var> {
        let sc = self.shape(context).to_vec();
        let sw = self.shape(w).to_vec();
        let sh = self.shape(hidden).to_vec();
        if sc.len() != 1 || sw.len() != 2 || sw[0] != sc[0] {
            return Err(Error::shape("bilinear_scores", &sc, &sw));
        }
        if sh.len() != 2 || sh[1] != sw[1] {
            return Err(Error::shape("bilinear_scores", &sw, &sh));
        }
        let (p, d, t) = (sw[0], sw[1], sh[0]);
        let mut query = vec![0.0; d];
        gemm_acc(self.value(context), self.value(w), &mut query, 1, p, d);
        let mut scores = vec![0.0; t];
        gemm_acc(self.value(hidden), &query, &mut scores, t, d, 1);
        let op = Op::BilinearScores {
            context: context.0,
            w: w.0,
            hidden: hidden.0,
            query,
        };
        Ok(self.push(Value::Owned(scores), vec![t], op))
    }

    /// Mean cross-entropy of softmax(logits) against integer labels, via
    /// log-sum-exp. `logits` is `[C]` (one label) or `[B × C]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let (rows, cols) = match shape.len() {
            1 => (1, shape[0]),
            2 => (shape[0], shape[1]),
            _ => return Err(Error::shape("cross_entropy", &shape, &[labels.len()])),
        };
        if rows != labels.len() || rows == 0 {
            return Err(Error::shape("cross_entropy", &shape, &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: cols,
            });
        }
        let values = self.value(logits);
        let mut probs = Vec::with_capacity(rows * cols);
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &values[r * cols..(r + 1) * cols];
            let lse = log_sum_exp(row);
            total += lse - row[label];
            probs.extend(row.iter().map(|x| (x - lse).exp()));
        }
        let loss = total / rows as f64;
        let op = Op::CrossEntropy {
            logits: logits.0,
            labels: labels.to_vec(),
            probs,
            cols,
        };
        Ok(self.push(Value::Owned(vec![loss]), Vec::new(), op))
    }

    /// Reverse sweep from a scalar `loss`. Gradients are accumulated, so a
    /// value consumed by several operations receives the sum of every path.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_node.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let flip_w = self.faults.contains(&Fault::FlipAttentionWeightGrad);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(idx);
            let Some(g) = upper[0].as_deref() else {
                continue;
            };
            let nodes = &self.nodes;
            macro_rules! slot {
                ($i:expr) => {
                    grad_slot(lower, nodes, $i)
                };
            }

            match &node.op {
                Op::Leaf => {}
                Op::MatMul { a, b, m, k, n } => {
                    let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
                    let (va, vb) = (&*nodes[a].value, &*nodes[b].value);
                    if a == b {
                        let mut tmp = vec![0.0; va.len()];
                        gemm_nt_acc(g, vb, &mut tmp, m, k, n);
                        gemm_tn_acc(va, g, &mut tmp, m, k, n);
                        add_into(slot!(a), &tmp);
                    } else {
                        if let Some(ga) = slot!(a) {
                            gemm_nt_acc(g, vb, ga, m, k, n);
                        }
                        if let Some(gb) = slot!(b) {
                            gemm_tn_acc(va, g, gb, m, k, n);
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(slot!(*a), g);
                    add_into(slot!(*b), g);
                }
                Op::Sub(a, b) => {
                    add_into(slot!(*a), g);
                    if let Some(gb) = slot!(*b) {
                        gb.iter_mut().zip(g).for_each(|(s, d)| *s -= d);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&*nodes[*a].value, &*nodes[*b].value);
                    if let Some(ga) = slot!(*a) {
                        for ((s, d), y) in ga.iter_mut().zip(g).zip(vb) {
                            *s += d * y;
                        }
                    }
                    if let Some(gb) = slot!(*b) {
                        for ((s, d), x) in gb.iter_mut().zip(g).zip(va) {
                            *s += d * x;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if let Some(ga) = slot!(*a) {
                        ga.iter_mut().zip(g).for_each(|(s, d)| *s += c * d);
                    }
                }
                Op::Sigmoid(a) => {
                    if let Some(ga) = slot!(*a) {
                        for ((s, d), y) in ga.iter_mut().zip(g).zip(node.value.iter()) {
                            *s += d * y * (1.0 - y);
                        }
                    }
                }
                Op::Tanh(a) => {
                    if let Some(ga) = slot!(*a) {
                        for ((s, d), y) in ga.iter_mut().zip(g).zip(node.value.iter()) {
                            *s += d * (1.0 - y * y);
                        }
                    }
                }
                Op::OneMinus(a) => {
                    if let Some(ga) = slot!(*a) {
                        ga.iter_mut().zip(g).for_each(|(s, d)| *s -= d);
                    }
                }
                Op::Sum(a) => {
                    if let Some(ga) = slot!(*a) {
                        ga.iter_mut().for_each(|s| *s += g[0]);
                    }
                }
                Op::Concat {
                    parts,
                    outer,
                    chunks,
                } => {
                    let total: usize = chunks.iter().sum();
                    let mut offset = 0;
                    for (&p, &c) in parts.iter().zip(chunks) {
                        if let Some(gp) = slot!(p) {
                            for o in 0..*outer {
                                let src = &g[o * total + offset..o * total + offset + c];
                                gp[o * c..(o + 1) * c]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(s, d)| *s += d);
                            }
                        }
                        offset += c;
                    }
                }
                Op::Softmax(x) => {
                    if let Some(gx) = slot!(*x) {
                        let y = &*node.value;
                        let inner = dot(g, y);
                        for ((s, d), yi) in gx.iter_mut().zip(g).zip(y) {
                            *s += yi * (d - inner);
                        }
                    }
                }
                Op::Row { m, index, cols } => {
                    if let Some(gm) = slot!(*m) {
                        gm[index * cols..(index + 1) * cols]
                            .iter_mut()
                            .zip(g)
                            .for_each(|(s, d)| *s += d);
                    }
                }
                Op::GatherRows { m, ids, cols } => {
                    if let Some(gm) = slot!(*m) {
                        for (r, &i) in ids.iter().enumerate() {
                            gm[i * cols..(i + 1) * cols]
                                .iter_mut()
                                .zip(&g[r * cols..(r + 1) * cols])
                                .for_each(|(s, d)| *s += d);
                        }
                    }
                }
                Op::StackRows { rows, cols } => {
                    for (r, &src) in rows.iter().enumerate() {
                        add_into(slot!(src), &g[r * cols..(r + 1) * cols]);
                    }
                }
                Op::BilinearScores {
                    context,
                    w,
                    hidden,
                    query,
                } => {
                    let (context, w, hidden) = (*context, *w, *hidden);
                    let (p, d) = (nodes[w].shape[0], nodes[w].shape[1]);
                    let t = nodes[hidden].shape[0];
                    let vh = &*nodes[hidden].value;
                    // dq = hiddenᵀ · g
                    let mut dq = vec![0.0; d];
                    gemm_tn_acc(vh, g, &mut dq, t, d, 1);
                    if let Some(gh) = slot!(hidden) {
                        gemm_acc(g, query, gh, t, 1, d);
                    }
                    if let Some(gc) = slot!(context) {
                        gemm_nt_acc(&dq, &nodes[w].value, gc, 1, p, d);
                    }
                    if let Some(gw) = slot!(w) {
                        let sign = if flip_w { -1.0 } else { 1.0 };
                        for (i, &c) in nodes[context].value.iter().enumerate() {
                            let row = &mut gw[i * d..(i + 1) * d];
                            row.iter_mut()
                                .zip(&dq)
                                .for_each(|(s, q)| *s += sign * c * q);
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                    cols,
                } => {
                    if let Some(gl) = slot!(*logits) {
                        let scale = g[0] / labels.len() as f64;
                        for (r, &label) in labels.iter().enumerate() {
                            for c in 0..*cols {
                                let target = if c == label { 1.0 } else { 0.0 };
                                gl[r * cols + c] += scale * (probs[r * cols + c] - target);
                            }
                        }
                    }
                }
            }
        }

        let sizes = self.nodes.iter().map(|n| n.value.len()).collect();
        Ok(Gradients { grads, sizes })
    }
}

fn grad_slot<'a>(
    lower: &'a mut [Option<Vec<f64>>],
    nodes: &[Node<'_>],
    i: usize,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[i].requires_grad {
        return None;
    }
    Some(lower[i].get_or_insert_with(|| vec![0.0; nodes[i].value.len()]))
}

fn add_into(slot: Option<&mut Vec<f64>>, g: &[f64]) {
    if let Some(s) = slot {
        s.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
}

pub fn softmax_values(x: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let excluded = |i: usize| mask.is_some_and(|m| m[i]);
    let max = x
        .iter()
        .enumerate()
        .filter(|(i, _)| !excluded(*i))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidMask);
    }
    let mut out: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| if excluded(i) { 0.0 } else { (v - max).exp() })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Result of [`Tape::backward`]: one optional gradient per recorded value.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    sizes: Vec<usize>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient for `v`, zero-filled when nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| vec![0.0; self.sizes[v.0]])
    }

    /// Adds the gradient of `v` into `tensor`'s grad slot.
    pub fn accumulate_into(&self, v: Var, tensor: &mut Tensor) {
        match self.get(v) {
            Some(g) => tensor.accumulate_grad(g),
            None => tensor.accumulate_grad(&vec![0.0; tensor.numel()]),
        }
    }
}
