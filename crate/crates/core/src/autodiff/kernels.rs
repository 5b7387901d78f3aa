//! Shared numeric kernels.
//!
//! Every routine here has a fixed accumulation order, and every code path
//! that computes the same mathematical quantity (full forward, incremental
//! decoding, backward) goes through the same routine. That is what makes
//! cached generation bit-identical to a full forward pass.

use crate::{Error, Result};

/// Dot product with a fixed 4-lane accumulation scheme.
#[inline(always)]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let a_chunks = a.chunks_exact(4);
    let b_chunks = b.chunks_exact(4);
    let mut tail = 0.0;
    for (x, y) in a_chunks.remainder().iter().zip(b_chunks.remainder()) {
        tail += x * y;
    }
    for (ca, cb) in a_chunks.zip(b_chunks) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`, element-wise.
#[inline(always)]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out += A (m x k) · B (k x n)`, row-major.
pub fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (l, &a_il) in a_row.iter().enumerate() {
            axpy(a_il, &b[l * n..(l + 1) * n], out_row);
        }
    }
}

/// `out += A (m x k) · Bᵀ` where `B` is `n x k` row-major.
pub fn matmul_nt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            *o += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out += Aᵀ · C` where `A` is `m x k` and `C` is `m x n`; result `k x n`.
pub fn matmul_tn_acc(a: &[f64], c: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &c[i * n..(i + 1) * n];
        for (l, &a_il) in a_row.iter().enumerate() {
            axpy(a_il, c_row, &mut out[l * n..(l + 1) * n]);
        }
    }
}

/// Numerically stable in-place softmax over `row`. Entries equal to -inf are
/// treated as masked and end up exactly 0.
pub fn softmax_row(row: &mut [f64]) -> Result<()> {
    let mut max = f64::NEG_INFINITY;
    for &v in row.iter() {
        if v > max {
            max = v;
        }
    }
    if !max.is_finite() {
        return Err(Error::FullyMaskedRow { row: 0 });
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
    Ok(())
}

/// Normalize `x` to mean 0 / variance 1 (within `eps`), writing the result to
/// `out` and returning `1 / sqrt(var + eps)`.
pub fn layer_norm_row(x: &[f64], eps: f64, out: &mut [f64]) -> f64 {
    debug_assert_eq!(x.len(), out.len());
    let n = x.len() as f64;
    let mut sum = 0.0;
    for &v in x {
        sum += v;
    }
    let mean = sum / n;
    let mut var_sum = 0.0;
    for &v in x {
        let d = v - mean;
        var_sum += d * d;
    }
    let inv_std = 1.0 / (var_sum / n + eps).sqrt();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - mean) * inv_std;
    }
    inv_std
}

/// Allowed keys of one attention query row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskRow {
    /// Keys `0..p` are allowed.
    Prefix(usize),
    /// An explicit ascending list of allowed keys.
    Keys(Vec<u32>),
}

impl MaskRow {
    pub fn allows(&self, key: usize) -> bool {
        match self {
            MaskRow::Prefix(p) => key < *p,
            MaskRow::Keys(keys) => keys.binary_search(&(key as u32)).is_ok(),
        }
    }

    pub fn count(&self) -> usize {
        match self {
            MaskRow::Prefix(p) => *p,
            MaskRow::Keys(keys) => keys.len(),
        }
    }
}

/// Per-query allowed-key sets of a square self-attention mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    pub len: usize,
    pub rows: Vec<MaskRow>,
}

impl SparsityPattern {
    /// Causal pattern: query `q` may attend keys `0..=q`.
    pub fn causal(len: usize) -> Self {
        Self {
            len,
            rows: (0..len).map(|q| MaskRow::Prefix(q + 1)).collect(),
        }
    }

    /// Everything attends everything.
    pub fn full(len: usize) -> Self {
        Self {
            len,
            rows: vec![MaskRow::Prefix(len); len],
        }
    }

    pub fn from_rows(rows: Vec<MaskRow>) -> Self {
        Self {
            len: rows.len(),
            rows,
        }
    }

    /// Error if some query has no allowed key (softmax would be undefined).
    pub fn check_no_empty_row(&self) -> Result<()> {
        for (q, row) in self.rows.iter().enumerate() {
            if row.count() == 0 {
                return Err(Error::FullyMaskedRow { row: q });
            }
        }
        Ok(())
    }

    pub fn for_each_allowed(&self, q: usize, mut f: impl FnMut(usize)) {
        match &self.rows[q] {
            MaskRow::Prefix(p) => {
                for k in 0..*p {
                    f(k);
                }
            }
            MaskRow::Keys(keys) => {
                for &k in keys {
                    f(k as usize);
                }
            }
        }
    }
}

/// Scaled dot-product attention weights for one query row against the first
/// `p` key rows: `softmax(scale * q · K[0..p]ᵀ)`. Writes `out[0..p]`; callers
/// must keep `out[p..]` zero.
pub fn attn_weights_row_prefix(
    q_row: &[f64],
    keys: &[f64],
    dh: usize,
    p: usize,
    scale: f64,
    out: &mut [f64],
) -> Result<()> {
    debug_assert!(keys.len() >= p * dh);
    for j in 0..p {
        out[j] = scale * dot(q_row, &keys[j * dh..(j + 1) * dh]);
    }
    softmax_row(&mut out[..p])
}

/// `out = Σ_j w[j] · V[j]` over the first `p` value rows.
pub fn weighted_sum_rows_prefix(w: &[f64], values: &[f64], dh: usize, p: usize, out: &mut [f64]) {
    debug_assert!(values.len() >= p * dh);
    out.fill(0.0);
    for j in 0..p {
        axpy(w[j], &values[j * dh..(j + 1) * dh], out);
    }
}
