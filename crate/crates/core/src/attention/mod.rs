//! Transformer building blocks shared by the generator and the imputer:
//! input feature assembly, sinusoidal positional encoding, attention masks
//! and the encoder stack.

mod incremental;

pub use incremental::IncrementalDecoder;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{MaskRow, NodeId, ParamSet, SparsityPattern, Tape, Tensor};
use crate::util::rng_stream;
use crate::{Error, Result};

/// Where layer normalization sits relative to each sublayer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    /// Residual add, then normalize (original transformer block order).
    #[default]
    Post,
    /// Normalize sublayer inputs; one final normalization after the stack.
    Pre,
}

/// Encoder stack hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_len: usize,
    #[serde(default)]
    pub norm: NormPlacement,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

fn default_eps() -> f64 {
    1e-9
}

impl EncoderConfig {
    /// `layers` x `d_model` stack with the defaults used throughout:
    /// 4 heads, `d_ff = 4 * d_model`, dropout 0.1.
    pub fn new(layers: usize, d_model: usize, max_len: usize) -> Self {
        Self {
            layers,
            d_model,
            heads: 4,
            d_ff: 4 * d_model,
            dropout: 0.1,
            max_len,
            norm: NormPlacement::Post,
            layer_norm_eps: default_eps(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_ff == 0 || self.max_len == 0 {
            return Err(Error::InvalidArgument(
                "encoder dimensions must be positive".into(),
            ));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Widths of the per-step input embeddings. The concatenation of all four is
/// linearly projected to `d_model`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub state_dim: usize,
    pub weekday_dim: usize,
    pub age_dim: usize,
    pub occupation_dim: usize,
}

impl FeatureSpec {
    /// Proportional default split for a given model width.
    pub fn for_d_model(d_model: usize) -> Self {
        Self {
            state_dim: d_model / 2,
            weekday_dim: d_model / 4,
            age_dim: d_model / 8,
            occupation_dim: d_model / 8,
        }
    }

    pub fn concat_dim(&self) -> usize {
        self.state_dim + self.weekday_dim + self.age_dim + self.occupation_dim
    }
}

/// Sinusoidal positional encoding: even columns `sin(pos / 10000^(2i/d))`,
/// odd columns the matching cosine.
pub fn positional_encoding(max_len: usize, d_model: usize) -> Result<Tensor> {
    if d_model % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "positional encoding needs an even width, got {d_model}"
        )));
    }
    let mut pe = Tensor::zeros(&[max_len, d_model]);
    for pos in 0..max_len {
        let row = pe.row_mut(pos);
        for i in 0..d_model / 2 {
            let rate = 1.0 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            let angle = pos as f64 * rate;
            row[2 * i] = angle.sin();
            row[2 * i + 1] = angle.cos();
        }
    }
    Ok(pe)
}

/// A square self-attention mask; `allowed(q, k)` says whether query `q` may
/// attend key `k`.
#[derive(Debug, Clone)]
pub struct AttentionMask {
    pattern: Arc<SparsityPattern>,
}

impl AttentionMask {
    /// Causal mask: `allowed(q, k) ⇔ k <= q`. Safe for autoregressive use
    /// under the shifted-input convention (position `t` holds the state of
    /// `t - 1`, so self-attention reveals nothing).
    pub fn causal(len: usize) -> Self {
        Self {
            pattern: Arc::new(SparsityPattern::causal(len)),
        }
    }

    /// Everything visible; used for padding-free bidirectional attention.
    pub fn full(len: usize) -> Self {
        Self {
            pattern: Arc::new(SparsityPattern::full(len)),
        }
    }

    /// Imputation mask over a token sequence where `home[k]` flags at-home
    /// positions: `allowed(q, k) ⇔ !home[k] ∨ k < q ∨ (allow_self ∧ k = q)`.
    ///
    /// Away keys stay visible in both directions; at-home keys are visible
    /// only to strictly later queries. The models pass `allow_self = true`:
    /// the query's own input token is a placeholder carrying time features
    /// only, so attending it reveals nothing and no query row can end up
    /// empty.
    pub fn imputation(home: &[bool], allow_self: bool) -> Self {
        let len = home.len();
        let rows = (0..len)
            .map(|q| {
                let keys: Vec<u32> = (0..len)
                    .filter(|&k| !home[k] || k < q || (allow_self && k == q))
                    .map(|k| k as u32)
                    .collect();
                // ascending by construction; a row is a plain prefix iff the
                // allowed set is exactly {0 .. m-1}
                let is_prefix = keys.last().is_none_or(|&last| last as usize + 1 == keys.len());
                if is_prefix {
                    MaskRow::Prefix(keys.len())
                } else {
                    MaskRow::Keys(keys)
                }
            })
            .collect();
        Self {
            pattern: Arc::new(SparsityPattern::from_rows(rows)),
        }
    }

    pub fn len(&self) -> usize {
        self.pattern.len
    }

    pub fn is_empty(&self) -> bool {
        self.pattern.len == 0
    }

    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.pattern.rows[q].allows(k)
    }

    /// Number of allowed (q, k) pairs.
    pub fn allowed_count(&self) -> usize {
        self.pattern.rows.iter().map(|r| r.count()).sum()
    }

    pub fn pattern(&self) -> Arc<SparsityPattern> {
        Arc::clone(&self.pattern)
    }

    /// Additive form: 0 where allowed, -inf where masked.
    pub fn additive(&self) -> Tensor {
        let l = self.len();
        let mut m = Tensor::filled(&[l, l], f64::NEG_INFINITY);
        for q in 0..l {
            self.pattern.for_each_allowed(q, |k| {
                m.data_mut()[q * l + k] = 0.0;
            });
        }
        m
    }

    pub fn check_no_empty_row(&self) -> Result<()> {
        self.pattern.check_no_empty_row()
    }
}

/// Index table of one encoder model's parameters inside a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub state_table: usize,
    pub weekday_table: usize,
    pub age_table: usize,
    pub occupation_table: usize,
    pub proj_w: usize,
    pub proj_b: usize,
    pub layers: Vec<LayerParams>,
    pub head_w: usize,
    pub head_b: usize,
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ff_w1: usize,
    pub ff_b1: usize,
    pub ff_w2: usize,
    pub ff_b2: usize,
}

impl ModelParams {
    /// The fixed registration order of an encoder model's parameters: four
    /// embedding tables, the input projection, eight tensors per layer, then
    /// the output head. Checkpoints rely on this order.
    pub fn layout(layers: usize) -> Self {
        let mut n = 0usize;
        let mut next = || {
            n += 1;
            n - 1
        };
        Self {
            state_table: next(),
            weekday_table: next(),
            age_table: next(),
            occupation_table: next(),
            proj_w: next(),
            proj_b: next(),
            layers: (0..layers)
                .map(|_| LayerParams {
                    wq: next(),
                    wk: next(),
                    wv: next(),
                    wo: next(),
                    ff_w1: next(),
                    ff_b1: next(),
                    ff_w2: next(),
                    ff_b2: next(),
                })
                .collect(),
            head_w: next(),
            head_b: next(),
        }
    }

    /// Total parameter-tensor count for a given layer count.
    pub fn tensor_count(layers: usize) -> usize {
        8 + 8 * layers
    }
}

/// Initialize all parameters of an encoder model with `vocab` input tokens
/// and `out_classes` output logits. Deterministic per seed.
pub fn init_params(
    cfg: &EncoderConfig,
    feat: &FeatureSpec,
    vocab: usize,
    out_classes: usize,
    seed: u64,
) -> Result<(ParamSet, ModelParams)> {
    cfg.validate()?;
    let mut rng = rng_stream(seed, &[u64::from_le_bytes(*b"initpar\0")]);
    let mut params = ParamSet::new();

    let emb = |rng: &mut rand_chacha::ChaCha8Rng, rows: usize, dim: usize| {
        Tensor::randn(&[rows, dim], 0.02, rng)
    };
    let state_table = params.push("embed.state", emb(&mut rng, vocab, feat.state_dim));
    let weekday_table = params.push("embed.weekday", emb(&mut rng, 7, feat.weekday_dim));
    let age_table = params.push("embed.age", emb(&mut rng, 7, feat.age_dim));
    let occupation_table = params.push("embed.occupation", emb(&mut rng, 7, feat.occupation_dim));

    let proj_w = params.push(
        "proj.w",
        Tensor::xavier(feat.concat_dim(), cfg.d_model, &mut rng),
    );
    let proj_b = params.push("proj.b", Tensor::zeros(&[cfg.d_model]));

    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let wq = params.push(
            format!("layer{l}.wq"),
            Tensor::xavier(cfg.d_model, cfg.d_model, &mut rng),
        );
        let wk = params.push(
            format!("layer{l}.wk"),
            Tensor::xavier(cfg.d_model, cfg.d_model, &mut rng),
        );
        let wv = params.push(
            format!("layer{l}.wv"),
            Tensor::xavier(cfg.d_model, cfg.d_model, &mut rng),
        );
        let wo = params.push(
            format!("layer{l}.wo"),
            Tensor::xavier(cfg.d_model, cfg.d_model, &mut rng),
        );
        let ff_w1 = params.push(
            format!("layer{l}.ffn.w1"),
            Tensor::xavier(cfg.d_model, cfg.d_ff, &mut rng),
        );
        let ff_b1 = params.push(format!("layer{l}.ffn.b1"), Tensor::zeros(&[cfg.d_ff]));
        let ff_w2 = params.push(
            format!("layer{l}.ffn.w2"),
            Tensor::xavier(cfg.d_ff, cfg.d_model, &mut rng),
        );
        let ff_b2 = params.push(format!("layer{l}.ffn.b2"), Tensor::zeros(&[cfg.d_model]));
        layers.push(LayerParams {
            wq,
            wk,
            wv,
            wo,
            ff_w1,
            ff_b1,
            ff_w2,
            ff_b2,
        });
    }

    // Small head init keeps the initial output distribution near uniform.
    let head_w = params.push(
        "head.w",
        Tensor::randn(&[cfg.d_model, out_classes], 0.02, &mut rng),
    );
    let head_b = params.push("head.b", Tensor::zeros(&[out_classes]));

    let index = ModelParams {
        state_table,
        weekday_table,
        age_table,
        occupation_table,
        proj_w,
        proj_b,
        layers,
        head_w,
        head_b,
    };
    debug_assert_eq!(params.len(), ModelParams::tensor_count(cfg.layers));
    debug_assert_eq!(index.head_b, ModelParams::layout(cfg.layers).head_b);
    Ok((params, index))
}

/// Per-step inputs of one sequence, already tokenized.
#[derive(Debug, Clone)]
pub struct SequenceInput {
    pub tokens: Vec<u32>,
    pub weekdays: Vec<u32>,
    /// Positional-encoding row per step (lets diary and week origins differ).
    pub positions: Vec<u32>,
    pub age_class: u8,
    pub occupation_class: u8,
}

impl SequenceInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weekdays.len() != self.tokens.len() || self.positions.len() != self.tokens.len() {
            return Err(Error::ShapeMismatch {
                op: "sequence_input",
                detail: format!(
                    "{} tokens, {} weekdays, {} positions",
                    self.tokens.len(),
                    self.weekdays.len(),
                    self.positions.len()
                ),
            });
        }
        Ok(())
    }
}

/// Embed, concatenate and project one sequence to `L x d_model`, adding the
/// positional-encoding rows selected by `input.positions`.
pub fn assemble_inputs(
    tape: &mut Tape,
    param_ids: &[NodeId],
    idx: &ModelParams,
    input: &SequenceInput,
    pe: &Tensor,
) -> Result<NodeId> {
    input.validate()?;
    let l = input.len();
    let ages = vec![input.age_class as u32; l];
    let occs = vec![input.occupation_class as u32; l];

    let state_e = tape.embedding(param_ids[idx.state_table], &input.tokens)?;
    let wd_e = tape.embedding(param_ids[idx.weekday_table], &input.weekdays)?;
    let age_e = tape.embedding(param_ids[idx.age_table], &ages)?;
    let occ_e = tape.embedding(param_ids[idx.occupation_table], &occs)?;

    let feats = tape.concat(&[state_e, wd_e, age_e, occ_e], 1)?;
    let projected = tape.matmul(feats, param_ids[idx.proj_w])?;
    let projected = tape.add_bias(projected, param_ids[idx.proj_b])?;

    let d_model = pe.cols();
    let mut pe_rows = Tensor::zeros(&[l, d_model]);
    for (i, &pos) in input.positions.iter().enumerate() {
        if pos as usize >= pe.rows() {
            return Err(Error::InvalidArgument(format!(
                "position {pos} beyond positional encoding length {}",
                pe.rows()
            )));
        }
        pe_rows.row_mut(i).copy_from_slice(pe.row(pos as usize));
    }
    let pe_node = tape.constant(pe_rows);
    tape.add(projected, pe_node)
}

/// Run the encoder stack over `inputs` (`L x d_model`). With zero layers
/// this is the identity.
#[allow(clippy::too_many_arguments)]
pub fn encoder_forward(
    tape: &mut Tape,
    param_ids: &[NodeId],
    idx: &ModelParams,
    cfg: &EncoderConfig,
    inputs: NodeId,
    mask: &AttentionMask,
    train: bool,
    rng: &mut impl Rng,
) -> Result<NodeId> {
    cfg.validate()?;
    let l = tape.value(inputs).rows();
    if tape.value(inputs).cols() != cfg.d_model || mask.len() != l {
        return Err(Error::ShapeMismatch {
            op: "encoder_forward",
            detail: format!(
                "inputs {:?}, d_model {}, mask len {}",
                tape.value(inputs).shape(),
                cfg.d_model,
                mask.len()
            ),
        });
    }
    mask.check_no_empty_row()?;

    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let pattern = mask.pattern();
    let eps = cfg.layer_norm_eps;

    let mut x = inputs;
    for layer in &idx.layers {
        // attention sublayer
        let attn_in = match cfg.norm {
            NormPlacement::Post => x,
            NormPlacement::Pre => tape.layer_norm(x, 1, eps)?,
        };
        let q = tape.matmul(attn_in, param_ids[layer.wq])?;
        let k = tape.matmul(attn_in, param_ids[layer.wk])?;
        let v = tape.matmul(attn_in, param_ids[layer.wv])?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let q_h = tape.slice_cols(q, h * dh, dh)?;
            let k_h = tape.slice_cols(k, h * dh, dh)?;
            let v_h = tape.slice_cols(v, h * dh, dh)?;
            let ctx_h = tape.attention(q_h, k_h, v_h, Arc::clone(&pattern), scale)?;
            heads.push(ctx_h);
        }
        let ctx = tape.concat(&heads, 1)?;
        let attn_out = tape.matmul(ctx, param_ids[layer.wo])?;
        let attn_out = tape.dropout(attn_out, cfg.dropout, train, rng)?;
        let res = tape.add(x, attn_out)?;
        x = match cfg.norm {
            NormPlacement::Post => tape.layer_norm(res, 1, eps)?,
            NormPlacement::Pre => res,
        };

        // position-wise feed-forward sublayer
        let ffn_in = match cfg.norm {
            NormPlacement::Post => x,
            NormPlacement::Pre => tape.layer_norm(x, 1, eps)?,
        };
        let h1 = tape.matmul(ffn_in, param_ids[layer.ff_w1])?;
        let h1 = tape.add_bias(h1, param_ids[layer.ff_b1])?;
        let h1 = tape.relu(h1);
        let h2 = tape.matmul(h1, param_ids[layer.ff_w2])?;
        let h2 = tape.add_bias(h2, param_ids[layer.ff_b2])?;
        let h2 = tape.dropout(h2, cfg.dropout, train, rng)?;
        let res = tape.add(x, h2)?;
        x = match cfg.norm {
            NormPlacement::Post => tape.layer_norm(res, 1, eps)?,
            NormPlacement::Pre => res,
        };
    }
    if cfg.norm == NormPlacement::Pre && !idx.layers.is_empty() {
        x = tape.layer_norm(x, 1, eps)?;
    }
    Ok(x)
}

/// Output head: `L x d_model` encoder output to `L x out_classes` logits.
pub fn logits_head(
    tape: &mut Tape,
    param_ids: &[NodeId],
    idx: &ModelParams,
    encoded: NodeId,
) -> Result<NodeId> {
    let z = tape.matmul(encoded, param_ids[idx.head_w])?;
    tape.add_bias(z, param_ids[idx.head_b])
}

/// Full-sequence logits without gradients: one tape forward in eval mode.
/// This shares every kernel with the training path, so outputs are
/// bit-identical to a training forward with dropout disabled.
pub fn forward_logits(
    params: &ParamSet,
    idx: &ModelParams,
    cfg: &EncoderConfig,
    input: &SequenceInput,
    mask: &AttentionMask,
    pe: &Tensor,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params
        .tensors()
        .iter()
        .map(|t| tape.leaf(t.clone(), false))
        .collect();
    let mut rng = rng_stream(0, &[]);
    let x = assemble_inputs(&mut tape, &ids, idx, input, pe)?;
    let enc = encoder_forward(&mut tape, &ids, idx, cfg, x, mask, false, &mut rng)?;
    let logits = logits_head(&mut tape, &ids, idx, enc)?;
    Ok(tape.value(logits).clone())
}
