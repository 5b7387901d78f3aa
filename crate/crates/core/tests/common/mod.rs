//! Shared test oracles: central finite differences against the tape's
//! analytic gradients. Independent of the backward implementation.

use schedsynth::autodiff::{NodeId, Tape, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Relative error with a small absolute floor so exact zeros compare sanely.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Compare analytic gradients of a scalar-valued tape program against
/// central finite differences over every element of every input. Returns the
/// largest relative error.
///
/// `build` must be deterministic: it is re-run for every probe.
pub fn check_gradients(
    inputs: &[Tensor],
    build: impl Fn(&mut Tape, &[NodeId]) -> NodeId,
) -> f64 {
    // analytic pass
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &ids);
    let mut grads = tape.backward(loss).expect("backward");
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, input)| {
            grads
                .take(id)
                .unwrap_or_else(|| Tensor::zeros(input.shape()))
        })
        .collect();

    let eval = |probe: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = probe.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let loss = build(&mut tape, &ids);
        tape.value(loss).item()
    };

    let mut worst = 0.0f64;
    for which in 0..inputs.len() {
        for j in 0..inputs[which].numel() {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let err = rel_err(analytic[which].data()[j], numeric);
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}

/// Random tensor with entries kept away from relu/FD kinks.
pub fn smooth_random(shape: &[usize], seed: u64) -> Tensor {
    use rand::Rng;
    let mut rng = test_rng(seed);
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() < 0.05 {
                v + 0.1 * v.signum().max(0.5)
            } else {
                v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape")
}

pub fn test_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand_chacha::rand_core::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
