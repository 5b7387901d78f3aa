//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Nodes are appended in evaluation order, so node index order is already a
//! topological order: the backward pass is a single reverse scan that visits
//! each node at most once. Cycles cannot be constructed through this API.

use std::sync::Arc;

use rand::Rng;

use super::kernels::{
    attn_weights_row_prefix, axpy, dot, layer_norm_row, matmul_acc, matmul_nt_acc, matmul_tn_acc,
    softmax_row, weighted_sum_rows_prefix, MaskRow, SparsityPattern,
};
use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Scale(NodeId, f64),
    Mul(NodeId, NodeId),
    SumAll(NodeId),
    Matmul(NodeId, NodeId),
    Relu(NodeId),
    Softmax {
        x: NodeId,
        axis: usize,
    },
    LayerNorm {
        x: NodeId,
        axis: usize,
        inv_std: Vec<f64>,
    },
    Embedding {
        table: NodeId,
        indices: Vec<u32>,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
    },
    Dropout {
        x: NodeId,
        keep: Vec<f64>,
    },
    AttnWeights {
        q: NodeId,
        k: NodeId,
        pattern: Arc<SparsityPattern>,
        scale: f64,
    },
    AttnMix {
        w: NodeId,
        v: NodeId,
        pattern: Arc<SparsityPattern>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        pattern: Arc<SparsityPattern>,
        scale: f64,
        weights: Box<Tensor>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<u32>,
        ignore: Option<u32>,
        probs: Box<Tensor>,
        denom: usize,
    },
}

struct Node {
    value: Tensor,
    grad_needed: bool,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by node id. Only leaf
/// nodes retain their gradient; interior gradients are dropped as soon as
/// they have been propagated.
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.slots[id.0].take()
    }

    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.slots[id.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
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

    fn push(&mut self, value: Tensor, grad_needed: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad_needed,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].grad_needed
    }

    /// Insert a leaf tensor. Gradients flow into it iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// A leaf that never receives gradients (positional encodings, masks...).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let mut out = ta.clone();
        for (o, &v) in out.data_mut().iter_mut().zip(tb.data()) {
            *o += v;
        }
        let needed = self.needs(a) || self.needs(b);
        Ok(self.push(out, needed, Op::Add(a, b)))
    }

    /// `x + b` with `b` broadcast over the rows of `x`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tb.rank() != 1 || tb.cols() != tx.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                detail: format!("x {:?}, bias {:?}", tx.shape(), tb.shape()),
            });
        }
        let mut out = tx.clone();
        let n = out.cols();
        for i in 0..out.rows() {
            axpy(1.0, tb.data(), &mut out.data_mut()[i * n..(i + 1) * n]);
        }
        let needed = self.needs(x) || self.needs(b);
        Ok(self.push(out, needed, Op::AddBias(x, b)))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v *= c;
        }
        let needed = self.needs(x);
        self.push(out, needed, Op::Scale(x, c))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let mut out = ta.clone();
        for (o, &v) in out.data_mut().iter_mut().zip(tb.data()) {
            *o *= v;
        }
        let needed = self.needs(a) || self.needs(b);
        Ok(self.push(out, needed, Op::Mul(a, b)))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let mut sum = 0.0;
        for &v in self.value(x).data() {
            sum += v;
        }
        let needed = self.needs(x);
        self.push(Tensor::scalar(sum), needed, Op::SumAll(x))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", ta.shape(), tb.shape()),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Tensor::zeros(&[m, n]);
        matmul_acc(ta.data(), tb.data(), m, k, n, out.data_mut());
        let needed = self.needs(a) || self.needs(b);
        Ok(self.push(out, needed, Op::Matmul(a, b)))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let needed = self.needs(x);
        self.push(out, needed, Op::Relu(x))
    }

    /// Softmax over `axis` with an optional additive mask of the same shape
    /// whose entries are 0 (keep) or -inf (mask out). Masked positions come
    /// out exactly 0; a fully masked slice is an error.
    pub fn softmax(&mut self, x: NodeId, axis: usize, mask: Option<&Tensor>) -> Result<NodeId> {
        let tx = self.value(x);
        let rank = tx.rank().max(1);
        if axis >= rank {
            return Err(Error::InvalidAxis { axis, rank });
        }
        if let Some(m) = mask {
            if m.shape() != tx.shape() {
                return Err(Error::ShapeMismatch {
                    op: "softmax",
                    detail: format!("mask {:?} vs input {:?}", m.shape(), tx.shape()),
                });
            }
        }
        let mut out = tx.clone();
        if let Some(m) = mask {
            for (o, &mv) in out.data_mut().iter_mut().zip(m.data()) {
                *o += mv;
            }
        }
        apply_per_slice(&mut out, axis, |row, slice| {
            softmax_row(slice).map_err(|_| Error::FullyMaskedRow { row })?;
            Ok(0.0)
        })?;
        let needed = self.needs(x);
        Ok(self.push(out, needed, Op::Softmax { x, axis }))
    }

    /// Normalize each slice along `axis` to mean 0, variance 1 (within
    /// `eps`). No learned affine transform is applied.
    pub fn layer_norm(&mut self, x: NodeId, axis: usize, eps: f64) -> Result<NodeId> {
        let tx = self.value(x);
        let rank = tx.rank().max(1);
        if axis >= rank {
            return Err(Error::InvalidAxis { axis, rank });
        }
        let mut out = tx.clone();
        let inv_std = apply_per_slice(&mut out, axis, |_, slice| {
            let tmp = slice.to_vec();
            Ok(layer_norm_row(&tmp, eps, slice))
        })?;
        let needed = self.needs(x);
        Ok(self.push(out, needed, Op::LayerNorm { x, axis, inv_std }))
    }

    /// Row lookup: `out[i] = table[indices[i]]`.
    pub fn embedding(&mut self, table: NodeId, indices: &[u32]) -> Result<NodeId> {
        let tt = self.value(table);
        if tt.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embedding",
                detail: format!("table must be rank 2, got {:?}", tt.shape()),
            });
        }
        let (v, d) = (tt.rows(), tt.cols());
        let mut out = Tensor::zeros(&[indices.len(), d]);
        for (i, &idx) in indices.iter().enumerate() {
            if idx as usize >= v {
                return Err(Error::InvalidArgument(format!(
                    "embedding index {idx} out of range for table with {v} rows"
                )));
            }
            out.row_mut(i).copy_from_slice(tt.row(idx as usize));
        }
        let needed = self.needs(table);
        Ok(self.push(
            out,
            needed,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Concatenate along `axis` (0 = stack rows, 1 = join columns).
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero parts".into()));
        }
        if axis > 1 {
            return Err(Error::InvalidAxis { axis, rank: 2 });
        }
        let first = self.value(parts[0]);
        let (rows0, cols0) = (first.rows(), first.cols());
        match axis {
            0 => {
                let mut rows = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.cols() != cols0 {
                        return Err(Error::ShapeMismatch {
                            op: "concat",
                            detail: "column counts differ".into(),
                        });
                    }
                    rows += t.rows();
                }
                let mut out = Tensor::zeros(&[rows, cols0]);
                let mut offset = 0;
                for &p in parts {
                    let t = self.value(p);
                    out.data_mut()[offset..offset + t.numel()].copy_from_slice(t.data());
                    offset += t.numel();
                }
                let needed = parts.iter().any(|&p| self.needs(p));
                Ok(self.push(
                    out,
                    needed,
                    Op::Concat {
                        parts: parts.to_vec(),
                        axis,
                    },
                ))
            }
            _ => {
                let mut cols = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.rows() != rows0 {
                        return Err(Error::ShapeMismatch {
                            op: "concat",
                            detail: "row counts differ".into(),
                        });
                    }
                    cols += t.cols();
                }
                let mut out = Tensor::zeros(&[rows0, cols]);
                for i in 0..rows0 {
                    let mut offset = 0;
                    for &p in parts {
                        let t = self.value(p);
                        let pc = t.cols();
                        out.data_mut()[i * cols + offset..i * cols + offset + pc]
                            .copy_from_slice(t.row(i));
                        offset += pc;
                    }
                }
                let needed = parts.iter().any(|&p| self.needs(p));
                Ok(self.push(
                    out,
                    needed,
                    Op::Concat {
                        parts: parts.to_vec(),
                        axis,
                    },
                ))
            }
        }
    }

    /// Column window `[start, start + len)` of a matrix.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let tx = self.value(x);
        if start + len > tx.cols() {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                detail: format!("[{start}, {}) of {} columns", start + len, tx.cols()),
            });
        }
        let rows = tx.rows();
        let mut out = Tensor::zeros(&[rows, len]);
        for i in 0..rows {
            out.row_mut(i).copy_from_slice(&tx.row(i)[start..start + len]);
        }
        let needed = self.needs(x);
        Ok(self.push(out, needed, Op::SliceCols { x, start, len }))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`. In eval
    /// mode (or at rate 0) this is the identity and adds no node.
    pub fn dropout(
        &mut self,
        x: NodeId,
        rate: f64,
        train: bool,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let inv_keep = 1.0 / (1.0 - rate);
        let keep: Vec<f64> = (0..self.value(x).numel())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    inv_keep
                }
            })
            .collect();
        let mut out = self.value(x).clone();
        for (o, &k) in out.data_mut().iter_mut().zip(&keep) {
            *o *= k;
        }
        let needed = self.needs(x);
        Ok(self.push(out, needed, Op::Dropout { x, keep }))
    }

    /// Fused masked attention weights: `softmax(scale * Q Kᵀ)` restricted to
    /// the allowed keys of `pattern`; disallowed entries are exactly 0.
    pub fn attn_weights(
        &mut self,
        q: NodeId,
        k: NodeId,
        pattern: Arc<SparsityPattern>,
        scale: f64,
    ) -> Result<NodeId> {
        let (tq, tk) = (self.value(q), self.value(k));
        let l = pattern.len;
        if tq.rank() != 2 || tq.shape() != tk.shape() || tq.rows() != l {
            return Err(Error::ShapeMismatch {
                op: "attn_weights",
                detail: format!(
                    "q {:?}, k {:?}, pattern len {l}",
                    tq.shape(),
                    tk.shape()
                ),
            });
        }
        pattern.check_no_empty_row()?;
        let dh = tq.cols();
        let mut out = Tensor::zeros(&[l, l]);
        for i in 0..l {
            let q_row = tq.row(i);
            let out_row = &mut out.data_mut()[i * l..(i + 1) * l];
            match &pattern.rows[i] {
                MaskRow::Prefix(p) => {
                    attn_weights_row_prefix(q_row, tk.data(), dh, *p, scale, out_row)
                        .map_err(|_| Error::FullyMaskedRow { row: i })?;
                }
                MaskRow::Keys(keys) => {
                    for &kk in keys {
                        let kk = kk as usize;
                        out_row[kk] = scale * dot(q_row, tk.row(kk));
                    }
                    // stable softmax over the allowed subset only
                    let mut max = f64::NEG_INFINITY;
                    for &kk in keys {
                        max = max.max(out_row[kk as usize]);
                    }
                    let mut sum = 0.0;
                    for &kk in keys {
                        let e = (out_row[kk as usize] - max).exp();
                        out_row[kk as usize] = e;
                        sum += e;
                    }
                    let inv = 1.0 / sum;
                    for &kk in keys {
                        out_row[kk as usize] *= inv;
                    }
                }
            }
        }
        let needed = self.needs(q) || self.needs(k);
        Ok(self.push(
            out,
            needed,
            Op::AttnWeights {
                q,
                k,
                pattern,
                scale,
            },
        ))
    }

    /// Context vectors `W · V` where `W` is an attention-weight matrix whose
    /// support is `pattern`: only allowed entries are touched.
    pub fn attn_mix(
        &mut self,
        w: NodeId,
        v: NodeId,
        pattern: Arc<SparsityPattern>,
    ) -> Result<NodeId> {
        let (tw, tv) = (self.value(w), self.value(v));
        let l = pattern.len;
        if tw.rows() != l || tw.cols() != l || tv.rows() != l {
            return Err(Error::ShapeMismatch {
                op: "attn_mix",
                detail: format!("w {:?}, v {:?}, pattern len {l}", tw.shape(), tv.shape()),
            });
        }
        let dh = tv.cols();
        let mut out = Tensor::zeros(&[l, dh]);
        for i in 0..l {
            let w_row = tw.row(i);
            let out_row = &mut out.data_mut()[i * dh..(i + 1) * dh];
            match &pattern.rows[i] {
                MaskRow::Prefix(p) => {
                    weighted_sum_rows_prefix(w_row, tv.data(), dh, *p, out_row);
                }
                MaskRow::Keys(keys) => {
                    for &kk in keys {
                        axpy(w_row[kk as usize], tv.row(kk as usize), out_row);
                    }
                }
            }
        }
        let needed = self.needs(w) || self.needs(v);
        Ok(self.push(out, needed, Op::AttnMix { w, v, pattern }))
    }

    /// Fused scaled-dot-product attention: context vectors
    /// `softmax(scale * Q Kᵀ) V` restricted to `pattern`. Equivalent to
    /// [`Self::attn_weights`] followed by [`Self::attn_mix`] bit for bit,
    /// but the weight matrix never becomes a differentiable node, which
    /// avoids materializing its gradient.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        pattern: Arc<SparsityPattern>,
        scale: f64,
    ) -> Result<NodeId> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let l = pattern.len;
        if tq.rank() != 2
            || tq.shape() != tk.shape()
            || tq.shape() != tv.shape()
            || tq.rows() != l
        {
            return Err(Error::ShapeMismatch {
                op: "attention",
                detail: format!(
                    "q {:?}, k {:?}, v {:?}, pattern len {l}",
                    tq.shape(),
                    tk.shape(),
                    tv.shape()
                ),
            });
        }
        pattern.check_no_empty_row()?;
        let dh = tq.cols();
        let mut weights = Tensor::zeros(&[l, l]);
        let mut ctx = Tensor::zeros(&[l, dh]);
        for i in 0..l {
            let q_row = tq.row(i);
            let w_row = &mut weights.data_mut()[i * l..(i + 1) * l];
            match &pattern.rows[i] {
                MaskRow::Prefix(p) => {
                    attn_weights_row_prefix(q_row, tk.data(), dh, *p, scale, w_row)
                        .map_err(|_| Error::FullyMaskedRow { row: i })?;
                }
                MaskRow::Keys(keys) => {
                    for &kk in keys {
                        let kk = kk as usize;
                        w_row[kk] = scale * dot(q_row, tk.row(kk));
                    }
                    let mut max = f64::NEG_INFINITY;
                    for &kk in keys {
                        max = max.max(w_row[kk as usize]);
                    }
                    let mut sum = 0.0;
                    for &kk in keys {
                        let e = (w_row[kk as usize] - max).exp();
                        w_row[kk as usize] = e;
                        sum += e;
                    }
                    let inv = 1.0 / sum;
                    for &kk in keys {
                        w_row[kk as usize] *= inv;
                    }
                }
            }
            let ctx_row = &mut ctx.data_mut()[i * dh..(i + 1) * dh];
            match &pattern.rows[i] {
                MaskRow::Prefix(p) => {
                    weighted_sum_rows_prefix(w_row, tv.data(), dh, *p, ctx_row);
                }
                MaskRow::Keys(keys) => {
                    for &kk in keys {
                        axpy(w_row[kk as usize], tv.row(kk as usize), ctx_row);
                    }
                }
            }
        }
        let needed = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(
            ctx,
            needed,
            Op::Attention {
                q,
                k,
                v,
                pattern,
                scale,
                weights: Box::new(weights),
            },
        ))
    }

    /// Mean of `-log softmax(logits)[target]` over rows whose target is not
    /// `ignore`. Ignored rows contribute nothing to loss or gradient.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[u32],
        ignore: Option<u32>,
    ) -> Result<NodeId> {
        let tl = self.value(logits);
        if tl.rank() != 2 || tl.rows() != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                detail: format!("logits {:?}, {} targets", tl.shape(), targets.len()),
            });
        }
        let classes = tl.cols() as u32;
        let mut probs = tl.clone();
        let mut loss = 0.0;
        let mut denom = 0usize;
        for (i, &t) in targets.iter().enumerate() {
            let row = probs.row_mut(i);
            softmax_row(row)
                .map_err(|_| Error::NumericFailure("non-finite logits in cross entropy".into()))?;
            if Some(t) == ignore {
                continue;
            }
            if t >= classes {
                return Err(Error::InvalidArgument(format!(
                    "target {t} out of range for {classes} classes"
                )));
            }
            loss -= row[t as usize].ln();
            denom += 1;
        }
        if denom == 0 {
            return Err(Error::AllRowsIgnored);
        }
        loss /= denom as f64;
        let needed = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            needed,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs: Box::new(probs),
                denom,
            },
        ))
    }

    /// Reverse-mode gradients of a scalar `loss` with respect to every leaf
    /// created with `requires_grad`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut slots: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].grad_needed || slots[id].is_none() {
                continue;
            }
            let g = slots[id].take().expect("grad present");
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    slots[id] = Some(g);
                }
                Op::Add(a, b) => {
                    for &p in &[*a, *b] {
                        if self.needs(p) {
                            let slot = grad_slot(&mut slots, p, self.value(p).shape());
                            axpy(1.0, g.data(), slot.data_mut());
                        }
                    }
                }
                Op::AddBias(x, b) => {
                    if self.needs(*x) {
                        let slot = grad_slot(&mut slots, *x, self.value(*x).shape());
                        axpy(1.0, g.data(), slot.data_mut());
                    }
                    if self.needs(*b) {
                        let n = g.cols();
                        let slot = grad_slot(&mut slots, *b, self.value(*b).shape());
                        for i in 0..g.rows() {
                            axpy(1.0, g.row(i), slot.data_mut());
                        }
                        debug_assert_eq!(slot.numel(), n);
                    }
                }
                Op::Scale(x, c) => {
                    if self.needs(*x) {
                        let slot = grad_slot(&mut slots, *x, self.value(*x).shape());
                        axpy(*c, g.data(), slot.data_mut());
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let tb = self.value(*b).data().to_vec();
                        let slot = grad_slot(&mut slots, *a, self.value(*a).shape());
                        for ((s, &gv), bv) in slot.data_mut().iter_mut().zip(g.data()).zip(tb) {
                            *s += gv * bv;
                        }
                    }
                    if self.needs(*b) {
                        let ta = self.value(*a).data().to_vec();
                        let slot = grad_slot(&mut slots, *b, self.value(*b).shape());
                        for ((s, &gv), av) in slot.data_mut().iter_mut().zip(g.data()).zip(ta) {
                            *s += gv * av;
                        }
                    }
                }
                Op::SumAll(x) => {
                    if self.needs(*x) {
                        let g0 = g.item();
                        let slot = grad_slot(&mut slots, *x, self.value(*x).shape());
                        for v in slot.data_mut() {
                            *v += g0;
                        }
                    }
                }
                Op::Matmul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    if self.needs(*a) {
                        let tb_data = tb.data().to_vec();
                        let slot = grad_slot(&mut slots, *a, ta.shape());
                        // dA = dC · Bᵀ
                        matmul_nt_acc(g.data(), &tb_data, m, n, k, slot.data_mut());
                    }
                    if self.needs(*b) {
                        let ta_data = ta.data().to_vec();
                        let slot = grad_slot(&mut slots, *b, tb.shape());
                        // dB = Aᵀ · dC
                        matmul_tn_acc(&ta_data, g.data(), m, k, n, slot.data_mut());
                    }
                }
                Op::Relu(x) => {
                    if self.needs(*x) {
                        let y = node.value.data().to_vec();
                        let slot = grad_slot(&mut slots, *x, self.value(*x).shape());
                        for ((s, &gv), yv) in slot.data_mut().iter_mut().zip(g.data()).zip(y) {
                            if yv > 0.0 {
                                *s += gv;
                            }
                        }
                    }
                }
                Op::Softmax { x, axis } => {
                    if self.needs(*x) {
                        let dx = softmax_backward(&node.value, &g, *axis);
                        let slot = grad_slot(&mut slots, *x, self.value(*x).shape());
                        axpy(1.0, dx.data(), slot.data_mut());
                    }
                }
                Op::LayerNorm { x, axis, inv_std } => {
                    if self.needs(*x) {
                        let dx = layer_norm_backward(&node.value, &g, *axis, inv_std);
                        let slot = grad_slot(&mut slots, *x, self.value(*x).shape());
                        axpy(1.0, dx.data(), slot.data_mut());
                    }
                }
                Op::Embedding { table, indices } => {
                    if self.needs(*table) {
                        let slot = grad_slot(&mut slots, *table, self.value(*table).shape());
                        let d = slot.cols();
                        for (i, &idx) in indices.iter().enumerate() {
                            let dst = &mut slot.data_mut()[idx as usize * d..(idx as usize + 1) * d];
                            axpy(1.0, g.row(i), dst);
                        }
                    }
                }
                Op::Concat { parts, axis } => match axis {
                    0 => {
                        let mut offset = 0;
                        for &p in parts {
                            let numel = self.value(p).numel();
                            if self.needs(p) {
                                let slot = grad_slot(&mut slots, p, self.value(p).shape());
                                axpy(1.0, &g.data()[offset..offset + numel], slot.data_mut());
                            }
                            offset += numel;
                        }
                    }
                    _ => {
                        let total_cols = g.cols();
                        let mut offset = 0;
                        for &p in parts {
                            let pc = self.value(p).cols();
                            if self.needs(p) {
                                let rows = self.value(p).rows();
                                let slot = grad_slot(&mut slots, p, self.value(p).shape());
                                for i in 0..rows {
                                    let src = &g.data()[i * total_cols + offset..i * total_cols + offset + pc];
                                    axpy(1.0, src, slot.row_mut(i));
                                }
                            }
                            offset += pc;
                        }
                    }
                },
                Op::SliceCols { x, start, len } => {
                    if self.needs(*x) {
                        let slot = grad_slot(&mut slots, *x, self.value(*x).shape());
                        for i in 0..g.rows() {
                            axpy(1.0, g.row(i), &mut slot.row_mut(i)[*start..*start + *len]);
                        }
                    }
                }
                Op::Dropout { x, keep } => {
                    if self.needs(*x) {
                        let slot = grad_slot(&mut slots, *x, self.value(*x).shape());
                        for ((s, &gv), &k) in slot.data_mut().iter_mut().zip(g.data()).zip(keep) {
                            *s += gv * k;
                        }
                    }
                }
                Op::AttnWeights {
                    q,
                    k,
                    pattern,
                    scale,
                } => {
                    let y = &node.value;
                    let l = pattern.len;
                    let (tq, tk) = (self.value(*q), self.value(*k));
                    let dh = tq.cols();
                    let mut dq = Tensor::zeros(tq.shape());
                    let mut dk = Tensor::zeros(tk.shape());
                    let mut ds = vec![0.0f64; l];
                    for i in 0..l {
                        let y_row = y.row(i);
                        let g_row = g.row(i);
                        let q_row = tq.row(i).to_vec();
                        let dq_row = dq.row_mut(i);
                        // softmax jacobian restricted to the allowed keys
                        match &pattern.rows[i] {
                            MaskRow::Prefix(p) => {
                                let s = dot(&g_row[..*p], &y_row[..*p]);
                                for j in 0..*p {
                                    ds[j] = y_row[j] * (g_row[j] - s);
                                }
                                for j in 0..*p {
                                    axpy(*scale * ds[j], tk.row(j), &mut *dq_row);
                                }
                                for j in 0..*p {
                                    axpy(
                                        *scale * ds[j],
                                        &q_row,
                                        &mut dk.data_mut()[j * dh..(j + 1) * dh],
                                    );
                                }
                            }
                            MaskRow::Keys(keys) => {
                                let mut s = 0.0;
                                for &kk in keys {
                                    let j = kk as usize;
                                    s += g_row[j] * y_row[j];
                                }
                                for &kk in keys {
                                    let j = kk as usize;
                                    ds[j] = y_row[j] * (g_row[j] - s);
                                }
                                for &kk in keys {
                                    let j = kk as usize;
                                    axpy(*scale * ds[j], tk.row(j), &mut *dq_row);
                                }
                                for &kk in keys {
                                    let j = kk as usize;
                                    axpy(
                                        *scale * ds[j],
                                        &q_row,
                                        &mut dk.data_mut()[j * dh..(j + 1) * dh],
                                    );
                                }
                            }
                        }
                    }
                    if self.needs(*q) {
                        let slot = grad_slot(&mut slots, *q, tq.shape());
                        axpy(1.0, dq.data(), slot.data_mut());
                    }
                    if self.needs(*k) {
                        let slot = grad_slot(&mut slots, *k, tk.shape());
                        axpy(1.0, dk.data(), slot.data_mut());
                    }
                }
                Op::AttnMix { w, v, pattern } => {
                    let (tw_shape, tv_shape) =
                        (self.value(*w).shape().to_vec(), self.value(*v).shape().to_vec());
                    let l = pattern.len;
                    let dh = tv_shape[1];
                    if self.needs(*w) {
                        let tv = self.value(*v);
                        // write straight into the slot: the weight matrix is
                        // the largest tensor on the tape
                        let slot = grad_slot(&mut slots, *w, &tw_shape);
                        for i in 0..l {
                            let g_row = &g.data()[i * dh..(i + 1) * dh];
                            let slot_row = &mut slot.data_mut()[i * l..(i + 1) * l];
                            match &pattern.rows[i] {
                                MaskRow::Prefix(p) => {
                                    for (j, sv) in slot_row.iter_mut().enumerate().take(*p) {
                                        *sv += dot(g_row, tv.row(j));
                                    }
                                }
                                MaskRow::Keys(keys) => {
                                    for &kk in keys {
                                        let j = kk as usize;
                                        slot_row[j] += dot(g_row, tv.row(j));
                                    }
                                }
                            }
                        }
                    }
                    if self.needs(*v) {
                        let tw = self.value(*w);
                        let slot = grad_slot(&mut slots, *v, &tv_shape);
                        for i in 0..l {
                            let g_row = &g.data()[i * dh..(i + 1) * dh];
                            let w_row = tw.row(i);
                            match &pattern.rows[i] {
                                MaskRow::Prefix(p) => {
                                    for j in 0..*p {
                                        axpy(
                                            w_row[j],
                                            g_row,
                                            &mut slot.data_mut()[j * dh..(j + 1) * dh],
                                        );
                                    }
                                }
                                MaskRow::Keys(keys) => {
                                    for &kk in keys {
                                        let j = kk as usize;
                                        axpy(
                                            w_row[j],
                                            g_row,
                                            &mut slot.data_mut()[j * dh..(j + 1) * dh],
                                        );
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    pattern,
                    scale,
                    weights,
                } => {
                    let l = pattern.len;
                    let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                    let dh = tq.cols();
                    let y = weights.as_ref();
                    let mut dq = Tensor::zeros(tq.shape());
                    let mut dk = Tensor::zeros(tk.shape());
                    let mut dv = Tensor::zeros(tv.shape());
                    let mut dw = vec![0.0f64; l];
                    let mut ds = vec![0.0f64; l];
                    for i in 0..l {
                        let g_row = g.row(i);
                        let y_row = y.row(i);
                        let q_row = tq.row(i).to_vec();
                        let dq_row = dq.row_mut(i);
                        match &pattern.rows[i] {
                            MaskRow::Prefix(p) => {
                                let p = *p;
                                for j in 0..p {
                                    axpy(y_row[j], g_row, &mut dv.data_mut()[j * dh..(j + 1) * dh]);
                                    dw[j] = dot(g_row, tv.row(j));
                                }
                                let s = dot(&dw[..p], &y_row[..p]);
                                for j in 0..p {
                                    ds[j] = y_row[j] * (dw[j] - s);
                                }
                                for j in 0..p {
                                    axpy(*scale * ds[j], tk.row(j), &mut *dq_row);
                                }
                                for j in 0..p {
                                    axpy(
                                        *scale * ds[j],
                                        &q_row,
                                        &mut dk.data_mut()[j * dh..(j + 1) * dh],
                                    );
                                }
                            }
                            MaskRow::Keys(keys) => {
                                for &kk in keys {
                                    let j = kk as usize;
                                    axpy(y_row[j], g_row, &mut dv.data_mut()[j * dh..(j + 1) * dh]);
                                    dw[j] = dot(g_row, tv.row(j));
                                }
                                let mut s = 0.0;
                                for &kk in keys {
                                    let j = kk as usize;
                                    s += dw[j] * y_row[j];
                                }
                                for &kk in keys {
                                    let j = kk as usize;
                                    ds[j] = y_row[j] * (dw[j] - s);
                                }
                                for &kk in keys {
                                    let j = kk as usize;
                                    axpy(*scale * ds[j], tk.row(j), &mut *dq_row);
                                }
                                for &kk in keys {
                                    let j = kk as usize;
                                    axpy(
                                        *scale * ds[j],
                                        &q_row,
                                        &mut dk.data_mut()[j * dh..(j + 1) * dh],
                                    );
                                }
                            }
                        }
                    }
                    for (parent, grad) in [(*q, dq), (*k, dk), (*v, dv)] {
                        if self.needs(parent) {
                            let slot = grad_slot(&mut slots, parent, self.value(parent).shape());
                            axpy(1.0, grad.data(), slot.data_mut());
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    ignore,
                    probs,
                    denom,
                } => {
                    if self.needs(*logits) {
                        let g0 = g.item() / *denom as f64;
                        let slot = grad_slot(&mut slots, *logits, self.value(*logits).shape());
                        for (i, &t) in targets.iter().enumerate() {
                            if Some(t) == *ignore {
                                continue;
                            }
                            let p_row = probs.row(i);
                            let s_row = slot.row_mut(i);
                            for (s, &p) in s_row.iter_mut().zip(p_row) {
                                *s += g0 * p;
                            }
                            s_row[t as usize] -= g0;
                        }
                    }
                }
            }
        }
        Ok(Gradients { slots })
    }
}

fn grad_slot<'a>(slots: &'a mut [Option<Tensor>], id: NodeId, shape: &[usize]) -> &'a mut Tensor {
    slots[id.0].get_or_insert_with(|| Tensor::zeros(shape))
}

/// Apply `f` to each slice of `t` along `axis`, collecting one stat per
/// slice. Axis 1 slices are rows (contiguous); axis 0 slices are columns.
fn apply_per_slice(
    t: &mut Tensor,
    axis: usize,
    mut f: impl FnMut(usize, &mut [f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let rank = t.rank();
    let (rows, cols) = (t.rows(), t.cols());
    let mut stats = Vec::new();
    if rank <= 1 || axis == 1 {
        for i in 0..rows {
            let stat = f(i, t.row_mut(i))?;
            stats.push(stat);
        }
    } else {
        let mut buf = vec![0.0f64; rows];
        for j in 0..cols {
            for i in 0..rows {
                buf[i] = t.data()[i * cols + j];
            }
            let stat = f(j, &mut buf)?;
            stats.push(stat);
            for i in 0..rows {
                t.data_mut()[i * cols + j] = buf[i];
            }
        }
    }
    Ok(stats)
}

fn softmax_backward(y: &Tensor, g: &Tensor, axis: usize) -> Tensor {
    let mut dx = Tensor::zeros(y.shape());
    let (rows, cols) = (y.rows(), y.cols());
    if y.rank() <= 1 || axis == 1 {
        for i in 0..rows {
            let y_row = y.row(i);
            let g_row = g.row(i);
            let s = dot(g_row, y_row);
            for (d, (&yv, &gv)) in dx.row_mut(i).iter_mut().zip(y_row.iter().zip(g_row)) {
                *d = yv * (gv - s);
            }
        }
    } else {
        for j in 0..cols {
            let mut s = 0.0;
            for i in 0..rows {
                s += g.data()[i * cols + j] * y.data()[i * cols + j];
            }
            for i in 0..rows {
                let yv = y.data()[i * cols + j];
                let gv = g.data()[i * cols + j];
                dx.data_mut()[i * cols + j] = yv * (gv - s);
            }
        }
    }
    dx
}

fn layer_norm_backward(y: &Tensor, g: &Tensor, axis: usize, inv_std: &[f64]) -> Tensor {
    let mut dx = Tensor::zeros(y.shape());
    let (rows, cols) = (y.rows(), y.cols());
    if y.rank() <= 1 || axis == 1 {
        for i in 0..rows {
            let y_row = y.row(i);
            let g_row = g.row(i);
            let n = cols as f64;
            let mean_g: f64 = g_row.iter().sum::<f64>() / n;
            let mean_gy: f64 = dot(g_row, y_row) / n;
            for (d, (&yv, &gv)) in dx.row_mut(i).iter_mut().zip(y_row.iter().zip(g_row)) {
                *d = inv_std[i] * (gv - mean_g - yv * mean_gy);
            }
        }
    } else {
        let n = rows as f64;
        for j in 0..cols {
            let mut mean_g = 0.0;
            let mut mean_gy = 0.0;
            for i in 0..rows {
                mean_g += g.data()[i * cols + j];
                mean_gy += g.data()[i * cols + j] * y.data()[i * cols + j];
            }
            mean_g /= n;
            mean_gy /= n;
            for i in 0..rows {
                let yv = y.data()[i * cols + j];
                let gv = g.data()[i * cols + j];
                dx.data_mut()[i * cols + j] = inv_std[j] * (gv - mean_g - yv * mean_gy);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_stream;

    #[test]
    fn square_gradient_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(y);
        assert_eq!(tape.value(loss).item(), 9.0);
        let mut grads = tape.backward(loss).unwrap();
        assert_eq!(grads.take(x).unwrap().item(), 6.0);
    }

    #[test]
    fn matmul_ones_value_and_grad() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::filled(&[2, 3], 1.0), true);
        let b = tape.leaf(Tensor::filled(&[3, 2], 1.0), true);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0; 4]);
        let loss = tape.sum_all(c);
        let mut grads = tape.backward(loss).unwrap();
        // d(sum)/dA[i,l] = sum_j B[l,j] = 2
        assert_eq!(grads.take(a).unwrap().data(), &[2.0; 6]);
        // d(sum)/dB[l,j] = sum_i A[i,l] = 2
        assert_eq!(grads.take(b).unwrap().data(), &[2.0; 6]);
    }

    #[test]
    fn softmax_cross_entropy_grad_is_probs_minus_onehot() {
        let mut tape = Tape::new();
        let logits = tape.leaf(
            Tensor::from_vec(&[1, 3], vec![0.2, -0.4, 1.3]).unwrap(),
            true,
        );
        let loss = tape.cross_entropy(logits, &[2], None).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        let g = grads.take(logits).unwrap();

        let mut probs = vec![0.2, -0.4, 1.3];
        softmax_row(&mut probs).unwrap();
        let expect = [probs[0], probs[1], probs[2] - 1.0];
        for (got, want) in g.data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn uniform_cross_entropy_is_log_k() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(&[4, 6]), true);
        let loss = tape.cross_entropy(logits, &[0, 1, 2, 3], None).unwrap();
        assert!((tape.value(loss).item() - 6.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_ignores_rows_and_rejects_empty() {
        let mut tape = Tape::new();
        let logits = tape.leaf(
            Tensor::from_vec(&[2, 3], vec![5.0, 0.0, 0.0, 9.0, 9.0, 9.0]).unwrap(),
            true,
        );
        let loss = tape.cross_entropy(logits, &[0, 3], Some(3)).unwrap();
        // the second row is ignored; only the first contributes
        let expected = {
            let mut p = vec![5.0, 0.0, 0.0];
            softmax_row(&mut p).unwrap();
            -p[0].ln()
        };
        assert!((tape.value(loss).item() - expected).abs() < 1e-12);
        let mut grads = tape.backward(loss).unwrap();
        let g = grads.take(logits).unwrap();
        assert!(g.row(1).iter().all(|&v| v == 0.0));

        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(&[2, 3]), true);
        assert!(matches!(
            tape.cross_entropy(logits, &[3, 3], Some(3)),
            Err(Error::AllRowsIgnored)
        ));
    }

    #[test]
    fn cross_entropy_high_margin_loss_vanishes() {
        let mut tape = Tape::new();
        let mut t = Tensor::zeros(&[1, 4]);
        t.data_mut()[1] = 60.0; // effectively infinite margin
        let logits = tape.leaf(t, false);
        let loss = tape.cross_entropy(logits, &[1], None).unwrap();
        assert!(tape.value(loss).item() < 1e-12);
    }

    #[test]
    fn masked_softmax_zeroes_masked_positions() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[1, 2], vec![5.0, 5.0]).unwrap(), false);
        let mask = Tensor::from_vec(&[1, 2], vec![0.0, f64::NEG_INFINITY]).unwrap();
        let y = tape.softmax(x, 1, Some(&mask)).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0]);

        let all = Tensor::from_vec(&[1, 2], vec![f64::NEG_INFINITY; 2]).unwrap();
        assert!(tape.softmax(x, 1, Some(&all)).is_err());
    }

    #[test]
    fn softmax_axis_zero_normalizes_columns() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[3, 2]), false);
        let y = tape.softmax(x, 0, None).unwrap();
        for j in 0..2 {
            let col_sum: f64 = (0..3).map(|i| tape.value(y).at(i, j)).sum();
            assert!((col_sum - 1.0).abs() < 1e-12);
            assert!((tape.value(y).at(0, j) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_statistics_per_row() {
        let mut tape = Tape::new();
        let x = tape.leaf(
            Tensor::from_vec(&[2, 4], vec![1., 2., 3., 4., -1., 5., 2., 0.]).unwrap(),
            false,
        );
        let y = tape.layer_norm(x, 1, 1e-9).unwrap();
        for i in 0..2 {
            let row = tape.value(y).row(i);
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn embedding_looks_up_and_scatters() {
        let mut tape = Tape::new();
        let table = tape.leaf(
            Tensor::from_vec(&[3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap(),
            true,
        );
        let e = tape.embedding(table, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(e).data(), &[5., 6., 1., 2., 5., 6.]);
        let loss = tape.sum_all(e);
        let mut grads = tape.backward(loss).unwrap();
        let g = grads.take(table).unwrap();
        // row 2 hit twice, row 0 once, row 1 never
        assert_eq!(g.data(), &[1., 1., 0., 0., 2., 2.]);

        assert!(tape.embedding(table, &[3]).is_err());
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(&[2, 1], vec![1., 2.]).unwrap(), true);
        let b = tape.leaf(Tensor::from_vec(&[2, 2], vec![3., 4., 5., 6.]).unwrap(), true);
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1., 3., 4., 2., 5., 6.]);
        let back = tape.slice_cols(c, 1, 2).unwrap();
        assert_eq!(tape.value(back).data(), tape.value(b).data());
        let loss = tape.sum_all(back);
        let mut grads = tape.backward(loss).unwrap();
        assert_eq!(grads.take(b).unwrap().data(), &[1.0; 4]);
        assert_eq!(grads.take(a).unwrap().data(), &[0.0; 2]);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales() {
        let mut rng = rng_stream(1, &[]);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(&[4, 4], 2.0), true);
        let eval = tape.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(eval, x);
        let train = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        for &v in tape.value(train).data() {
            assert!(v == 0.0 || (v - 4.0).abs() < 1e-12);
        }
        assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]), true);
        assert!(matches!(
            tape.backward(x),
            Err(Error::NonScalarLoss(_))
        ));
    }

    #[test]
    fn fused_attention_matches_unfused_ops() {
        let mut rng = rng_stream(42, &[]);
        let l = 5;
        let dh = 4;
        let q_t = Tensor::randn(&[l, dh], 1.0, &mut rng);
        let k_t = Tensor::randn(&[l, dh], 1.0, &mut rng);
        let pattern = Arc::new(SparsityPattern::causal(l));
        let scale = 1.0 / (dh as f64).sqrt();

        let mut tape = Tape::new();
        let q = tape.leaf(q_t.clone(), false);
        let k = tape.leaf(k_t.clone(), false);
        let fused = tape.attn_weights(q, k, pattern.clone(), scale).unwrap();

        // unfused: scores with additive -inf mask, then generic softmax
        let mut mask = Tensor::zeros(&[l, l]);
        for i in 0..l {
            for j in 0..l {
                if !pattern.rows[i].allows(j) {
                    mask.data_mut()[i * l + j] = f64::NEG_INFINITY;
                }
            }
        }
        let mut scores = Tensor::zeros(&[l, l]);
        matmul_nt_acc(q_t.data(), k_t.data(), l, dh, l, scores.data_mut());
        let s = tape.leaf(scores, false);
        let scaled = tape.scale(s, scale);
        let soft = tape.softmax(scaled, 1, Some(&mask)).unwrap();

        for (a, b) in tape.value(fused).data().iter().zip(tape.value(soft).data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // each query row sums to 1 over allowed keys
        for i in 0..l {
            let sum: f64 = tape.value(fused).row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
