//! Finite-difference verification of every autodiff primitive and of the
//! composed encoder stack. The numeric side never touches the backward
//! implementation: it only evaluates forward losses.

mod common;

use std::sync::Arc;

use common::{check_gradients, smooth_random, test_rng, GRAD_TOL};
use schedsynth::attention::{
    assemble_inputs, encoder_forward, logits_head, positional_encoding, AttentionMask,
    EncoderConfig, FeatureSpec, SequenceInput,
};
use schedsynth::autodiff::{MaskRow, SparsityPattern, Tensor};

#[test]
fn matmul_gradients() {
    for seed in 0..6 {
        let a = smooth_random(&[3, 4], seed);
        let b = smooth_random(&[4, 5], 100 + seed);
        let r = smooth_random(&[3, 5], 200 + seed);
        let err = check_gradients(&[a, b], |tape, ids| {
            let c = tape.matmul(ids[0], ids[1]).unwrap();
            let rr = tape.constant(r.clone());
            let m = tape.mul(c, rr).unwrap();
            tape.sum_all(m)
        });
        assert!(err < GRAD_TOL, "seed {seed}: {err}");
    }
}

#[test]
fn elementwise_gradients() {
    for seed in 0..6 {
        let a = smooth_random(&[4, 3], seed);
        let b = smooth_random(&[4, 3], 50 + seed);
        let bias = smooth_random(&[3], 80 + seed);
        let r = smooth_random(&[4, 3], 90 + seed);
        let err = check_gradients(&[a, b, bias], |tape, ids| {
            let sum = tape.add(ids[0], ids[1]).unwrap();
            let scaled = tape.scale(sum, -1.7);
            let biased = tape.add_bias(scaled, ids[2]).unwrap();
            let act = tape.relu(biased);
            let rr = tape.constant(r.clone());
            let m = tape.mul(act, rr).unwrap();
            tape.sum_all(m)
        });
        assert!(err < GRAD_TOL, "seed {seed}: {err}");
    }
}

#[test]
fn softmax_gradients_with_and_without_mask() {
    let mut mask = Tensor::zeros(&[3, 5]);
    mask.data_mut()[2] = f64::NEG_INFINITY;
    mask.data_mut()[9] = f64::NEG_INFINITY;
    for seed in 0..6 {
        let x = smooth_random(&[3, 5], seed);
        let r = smooth_random(&[3, 5], 300 + seed);
        for use_mask in [false, true] {
            let mask = mask.clone();
            let r = r.clone();
            let err = check_gradients(&[x.clone()], |tape, ids| {
                let y = tape
                    .softmax(ids[0], 1, use_mask.then_some(&mask))
                    .unwrap();
                let rr = tape.constant(r.clone());
                let m = tape.mul(y, rr).unwrap();
                tape.sum_all(m)
            });
            assert!(err < GRAD_TOL, "seed {seed} mask {use_mask}: {err}");
        }
        // axis 0
        let err = check_gradients(&[x.clone()], |tape, ids| {
            let y = tape.softmax(ids[0], 0, None).unwrap();
            let rr = tape.constant(r.clone());
            let m = tape.mul(y, rr).unwrap();
            tape.sum_all(m)
        });
        assert!(err < GRAD_TOL, "seed {seed} axis 0: {err}");
    }
}

#[test]
fn layer_norm_gradients_both_axes() {
    for seed in 0..6 {
        let x = smooth_random(&[4, 6], seed);
        let r = smooth_random(&[4, 6], 400 + seed);
        for axis in [0, 1] {
            let r = r.clone();
            let err = check_gradients(&[x.clone()], |tape, ids| {
                let y = tape.layer_norm(ids[0], axis, 1e-9).unwrap();
                let rr = tape.constant(r.clone());
                let m = tape.mul(y, rr).unwrap();
                tape.sum_all(m)
            });
            assert!(err < GRAD_TOL, "seed {seed} axis {axis}: {err}");
        }
    }
}

#[test]
fn embedding_concat_slice_gradients() {
    for seed in 0..6 {
        let table = smooth_random(&[5, 4], seed);
        let other = smooth_random(&[3, 2], 10 + seed);
        let r = smooth_random(&[3, 3], 500 + seed);
        let err = check_gradients(&[table, other], |tape, ids| {
            let e = tape.embedding(ids[0], &[4, 0, 4]).unwrap();
            let joined = tape.concat(&[e, ids[1]], 1).unwrap();
            let window = tape.slice_cols(joined, 2, 3).unwrap();
            let rr = tape.constant(r.clone());
            let m = tape.mul(window, rr).unwrap();
            tape.sum_all(m)
        });
        assert!(err < GRAD_TOL, "seed {seed}: {err}");
    }
}

#[test]
fn dropout_gradients_with_fixed_stream() {
    for seed in 0..6 {
        let x = smooth_random(&[6, 6], seed);
        let r = smooth_random(&[6, 6], 600 + seed);
        let err = check_gradients(&[x], |tape, ids| {
            let mut rng = test_rng(777);
            let y = tape.dropout(ids[0], 0.4, true, &mut rng).unwrap();
            let rr = tape.constant(r.clone());
            let m = tape.mul(y, rr).unwrap();
            tape.sum_all(m)
        });
        assert!(err < GRAD_TOL, "seed {seed}: {err}");
    }
}

#[test]
fn attention_gradients_causal_and_scattered() {
    let scattered = SparsityPattern::from_rows(vec![
        MaskRow::Prefix(5),
        MaskRow::Keys(vec![0, 2, 4]),
        MaskRow::Keys(vec![1, 2]),
        MaskRow::Prefix(4),
        MaskRow::Keys(vec![0, 4]),
    ]);
    for seed in 0..6 {
        let q = smooth_random(&[5, 4], seed);
        let k = smooth_random(&[5, 4], 20 + seed);
        let v = smooth_random(&[5, 4], 40 + seed);
        let r = smooth_random(&[5, 4], 700 + seed);
        for pattern in [Arc::new(SparsityPattern::causal(5)), Arc::new(scattered.clone())] {
            let r = r.clone();
            // fused op
            let err = check_gradients(&[q.clone(), k.clone(), v.clone()], |tape, ids| {
                let ctx = tape
                    .attention(ids[0], ids[1], ids[2], Arc::clone(&pattern), 0.5)
                    .unwrap();
                let rr = tape.constant(r.clone());
                let m = tape.mul(ctx, rr).unwrap();
                tape.sum_all(m)
            });
            assert!(err < GRAD_TOL, "fused seed {seed}: {err}");
            // unfused pair
            let r2 = r.clone();
            let err = check_gradients(&[q.clone(), k.clone(), v.clone()], |tape, ids| {
                let w = tape
                    .attn_weights(ids[0], ids[1], Arc::clone(&pattern), 0.5)
                    .unwrap();
                let ctx = tape.attn_mix(w, ids[2], Arc::clone(&pattern)).unwrap();
                let rr = tape.constant(r2.clone());
                let m = tape.mul(ctx, rr).unwrap();
                tape.sum_all(m)
            });
            assert!(err < GRAD_TOL, "unfused seed {seed}: {err}");
        }
    }
}

#[test]
fn cross_entropy_gradients_with_ignore() {
    for seed in 0..6 {
        let logits = smooth_random(&[5, 4], seed);
        let targets = [1u32, 9, 3, 0, 9]; // 9 is the ignored class marker
        let err = check_gradients(&[logits], |tape, ids| {
            tape.cross_entropy(ids[0], &targets, Some(9)).unwrap()
        });
        assert!(err < GRAD_TOL, "seed {seed}: {err}");
    }
}

/// The full composed model: embeddings, projection, positional encoding,
/// two post-norm encoder layers, output head, cross entropy. Every
/// parameter tensor is probed.
#[test]
fn composed_two_layer_encoder_gradients() {
    let mut cfg = EncoderConfig::new(2, 8, 8);
    cfg.heads = 2;
    cfg.d_ff = 16;
    cfg.dropout = 0.0;
    let feat = FeatureSpec::for_d_model(8);
    let input = SequenceInput {
        tokens: vec![6, 0, 3, 2, 5, 1],
        weekdays: vec![0, 0, 1, 1, 2, 2],
        positions: vec![0, 1, 2, 3, 4, 5],
        age_class: 3,
        occupation_class: 1,
    };
    let targets = [0u32, 3, 2, 5, 1, 4];
    let pe = positional_encoding(8, 8).unwrap();

    for (mask_name, mask) in [
        ("causal", AttentionMask::causal(6)),
        (
            "imputation",
            AttentionMask::imputation(&[false, true, false, true, true, false], true),
        ),
    ] {
        for seed in 0..3 {
            let (params, index) =
                schedsynth::attention::init_params(&cfg, &feat, 7, 6, seed).unwrap();
            let inputs: Vec<Tensor> = params.tensors().to_vec();
            let err = check_gradients(&inputs, |tape, ids| {
                let mut rng = test_rng(0);
                let x = assemble_inputs(tape, ids, &index, &input, &pe).unwrap();
                let enc =
                    encoder_forward(tape, ids, &index, &cfg, x, &mask, false, &mut rng).unwrap();
                let logits = logits_head(tape, ids, &index, enc).unwrap();
                tape.cross_entropy(logits, &targets, None).unwrap()
            });
            assert!(err < GRAD_TOL, "{mask_name} seed {seed}: {err}");
        }
    }
}
