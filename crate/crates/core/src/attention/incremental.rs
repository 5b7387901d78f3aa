//! Incremental (cached) decoding for causal attention.
//!
//! Appends one position at a time, caching per-head keys and values. Every
//! arithmetic step goes through the same kernels as the full tape forward,
//! in the same order, so the logits are bit-identical to running the whole
//! prefix through [`super::forward_logits`] with a causal mask.

use super::{EncoderConfig, ModelParams, NormPlacement};
use crate::autodiff::kernels::{
    attn_weights_row_prefix, axpy, layer_norm_row, matmul_acc, weighted_sum_rows_prefix,
};
use crate::autodiff::{ParamSet, Tensor};
use crate::{Error, Result};

pub struct IncrementalDecoder<'a> {
    params: &'a ParamSet,
    idx: &'a ModelParams,
    cfg: &'a EncoderConfig,
    pe: &'a Tensor,
    age_class: u8,
    occupation_class: u8,
    /// Flattened key/value rows per `[layer][head]`, `head_dim` wide.
    k_cache: Vec<Vec<Vec<f64>>>,
    v_cache: Vec<Vec<Vec<f64>>>,
    t: usize,
}

impl<'a> IncrementalDecoder<'a> {
    pub fn new(
        params: &'a ParamSet,
        idx: &'a ModelParams,
        cfg: &'a EncoderConfig,
        pe: &'a Tensor,
        age_class: u8,
        occupation_class: u8,
    ) -> Self {
        let layers = idx.layers.len();
        Self {
            params,
            idx,
            cfg,
            pe,
            age_class,
            occupation_class,
            k_cache: vec![vec![Vec::new(); cfg.heads]; layers],
            v_cache: vec![vec![Vec::new(); cfg.heads]; layers],
            t: 0,
        }
    }

    /// Steps decoded so far.
    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    fn tensor(&self, index: usize) -> &Tensor {
        &self.params.tensors()[index]
    }

    /// Append one input token and return the output logits for its position.
    pub fn step(&mut self, token: u32, weekday: u32, position: u32) -> Result<Vec<f64>> {
        let cfg = self.cfg;
        let idx = self.idx;
        let d = cfg.d_model;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let eps = cfg.layer_norm_eps;

        // input row: concat(embeddings) -> projection -> + positional row
        let state_table = self.tensor(idx.state_table);
        if token as usize >= state_table.rows() {
            return Err(Error::InvalidArgument(format!(
                "token {token} out of range for table with {} rows",
                state_table.rows()
            )));
        }
        if position as usize >= self.pe.rows() {
            return Err(Error::InvalidArgument(format!(
                "position {position} beyond positional encoding length {}",
                self.pe.rows()
            )));
        }
        let mut feats = Vec::with_capacity(
            state_table.cols()
                + self.tensor(idx.weekday_table).cols()
                + self.tensor(idx.age_table).cols()
                + self.tensor(idx.occupation_table).cols(),
        );
        feats.extend_from_slice(state_table.row(token as usize));
        feats.extend_from_slice(self.tensor(idx.weekday_table).row(weekday as usize));
        feats.extend_from_slice(self.tensor(idx.age_table).row(self.age_class as usize));
        feats.extend_from_slice(
            self.tensor(idx.occupation_table)
                .row(self.occupation_class as usize),
        );

        let mut x = vec![0.0f64; d];
        matmul_acc(&feats, self.tensor(idx.proj_w).data(), 1, feats.len(), d, &mut x);
        axpy(1.0, self.tensor(idx.proj_b).data(), &mut x);
        for (xi, &p) in x.iter_mut().zip(self.pe.row(position as usize)) {
            *xi += p;
        }

        let p = self.t + 1; // keys visible to this query, self included
        let mut q_row = vec![0.0f64; d];
        let mut k_row = vec![0.0f64; d];
        let mut v_row = vec![0.0f64; d];
        let mut ctx = vec![0.0f64; d];
        let mut attn_out = vec![0.0f64; d];
        let mut weights = vec![0.0f64; p];
        let mut h1 = vec![0.0f64; cfg.d_ff];
        let mut h2 = vec![0.0f64; d];
        let mut norm_buf = vec![0.0f64; d];

        for (layer_i, layer) in idx.layers.iter().enumerate() {
            let attn_in: &[f64] = match cfg.norm {
                NormPlacement::Post => &x,
                NormPlacement::Pre => {
                    layer_norm_row(&x, eps, &mut norm_buf);
                    &norm_buf
                }
            };
            q_row.fill(0.0);
            k_row.fill(0.0);
            v_row.fill(0.0);
            matmul_acc(attn_in, self.tensor(layer.wq).data(), 1, d, d, &mut q_row);
            matmul_acc(attn_in, self.tensor(layer.wk).data(), 1, d, d, &mut k_row);
            matmul_acc(attn_in, self.tensor(layer.wv).data(), 1, d, d, &mut v_row);

            for h in 0..cfg.heads {
                let slice = h * dh..(h + 1) * dh;
                self.k_cache[layer_i][h].extend_from_slice(&k_row[slice.clone()]);
                self.v_cache[layer_i][h].extend_from_slice(&v_row[slice.clone()]);
                attn_weights_row_prefix(
                    &q_row[slice.clone()],
                    &self.k_cache[layer_i][h],
                    dh,
                    p,
                    scale,
                    &mut weights,
                )?;
                weighted_sum_rows_prefix(
                    &weights,
                    &self.v_cache[layer_i][h],
                    dh,
                    p,
                    &mut ctx[slice],
                );
            }

            attn_out.fill(0.0);
            matmul_acc(&ctx, self.tensor(layer.wo).data(), 1, d, d, &mut attn_out);
            for (a, &xi) in attn_out.iter_mut().zip(&x) {
                // residual: x + sublayer(x), matching the tape's add order
                *a = xi + *a;
            }
            match cfg.norm {
                NormPlacement::Post => {
                    layer_norm_row(&attn_out, eps, &mut x);
                }
                NormPlacement::Pre => x.copy_from_slice(&attn_out),
            }

            let ffn_in: &[f64] = match cfg.norm {
                NormPlacement::Post => &x,
                NormPlacement::Pre => {
                    layer_norm_row(&x, eps, &mut norm_buf);
                    &norm_buf
                }
            };
            h1.fill(0.0);
            matmul_acc(ffn_in, self.tensor(layer.ff_w1).data(), 1, d, cfg.d_ff, &mut h1);
            axpy(1.0, self.tensor(layer.ff_b1).data(), &mut h1);
            for v in h1.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            h2.fill(0.0);
            matmul_acc(&h1, self.tensor(layer.ff_w2).data(), 1, cfg.d_ff, d, &mut h2);
            axpy(1.0, self.tensor(layer.ff_b2).data(), &mut h2);
            for (hv, &xi) in h2.iter_mut().zip(&x) {
                *hv = xi + *hv;
            }
            match cfg.norm {
                NormPlacement::Post => {
                    layer_norm_row(&h2, eps, &mut x);
                }
                NormPlacement::Pre => x.copy_from_slice(&h2),
            }
        }
        if cfg.norm == NormPlacement::Pre && !idx.layers.is_empty() {
            layer_norm_row(&x.clone(), eps, &mut x);
        }

        let head_w = self.tensor(idx.head_w);
        let classes = head_w.cols();
        let mut logits = vec![0.0f64; classes];
        matmul_acc(&x, head_w.data(), 1, d, classes, &mut logits);
        axpy(1.0, self.tensor(idx.head_b).data(), &mut logits);

        self.t += 1;
        Ok(logits)
    }
}
