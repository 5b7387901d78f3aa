//! Categorical sampling shared by the models.

use rand::Rng;

use crate::autodiff::kernels::softmax_row;
use crate::{Error, Result};

/// Index of the maximum; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Temperature-scaled softmax of logits. Temperature must be positive;
/// temperature 0 (argmax) is handled by [`sample_logits`].
pub fn softmax_with_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut probs: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
    softmax_row(&mut probs)
        .map_err(|_| Error::NumericFailure("non-finite logits while sampling".into()))?;
    Ok(probs)
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Sample from logits at a given temperature; temperature 0 is exact argmax
/// and negative temperatures are rejected.
pub fn sample_logits(logits: &[f64], temperature: f64, rng: &mut impl Rng) -> Result<usize> {
    if temperature < 0.0 || !temperature.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be non-negative, got {temperature}"
        )));
    }
    if temperature == 0.0 {
        return Ok(argmax(logits));
    }
    let probs = softmax_with_temperature(logits, temperature)?;
    Ok(sample_categorical(&probs, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_stream;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0]), 0);
    }

    #[test]
    fn zero_temperature_is_argmax_and_negative_rejected() {
        let mut rng = rng_stream(0, &[]);
        let logits = [0.1, 2.0, -1.0];
        for _ in 0..10 {
            assert_eq!(sample_logits(&logits, 0.0, &mut rng).unwrap(), 1);
        }
        assert!(sample_logits(&logits, -1.0, &mut rng).is_err());
    }

    #[test]
    fn high_temperature_flattens() {
        let p = softmax_with_temperature(&[2.0, 0.0], 1000.0).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-3);
        let p = softmax_with_temperature(&[2.0, 0.0], 0.01).unwrap();
        assert!(p[0] > 0.999);
    }

    #[test]
    fn categorical_sampling_is_seed_deterministic() {
        let probs = [0.25, 0.5, 0.25];
        let draw = |seed| {
            let mut rng = rng_stream(seed, &[]);
            (0..20)
                .map(|_| sample_categorical(&probs, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }
}
