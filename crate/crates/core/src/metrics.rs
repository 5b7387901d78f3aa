//! The five corpus-comparison metrics: aggregated state probabilities (sp),
//! state duration histograms (sd), per-state autocorrelation (ac), weekly
//! episode counts (na) and the distribution of Hamming distances between
//! working days (hd).
//!
//! All metrics are exactly zero when a corpus is compared with itself.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{WeekCorpus, DAY_STEPS, WEEK_STEPS};
use crate::util::rng_stream;
use crate::{Error, Result};

/// Knobs of [`compare`]; constructors give the week- and day-level defaults.
#[derive(Debug, Clone)]
pub struct CompareOptions {
    /// Alphabet size shared by both corpora.
    pub states: usize,
    /// Autocorrelation lags 1..=max_lag.
    pub max_lag: usize,
    /// Duration histogram bins 1..=duration_cap; longer runs pool into the
    /// last bin.
    pub duration_cap: usize,
    /// Hamming distances of working-day pairs (week corpora only).
    pub include_hd: bool,
}

impl CompareOptions {
    /// Week-long sequences: lags up to three days, hd included.
    pub fn weeks(states: usize) -> Self {
        Self {
            states,
            max_lag: 432,
            duration_cap: 432,
            include_hd: true,
        }
    }

    /// Day-long sequences: lags up to 18 hours, no hd.
    pub fn days(states: usize) -> Self {
        Self {
            states,
            max_lag: 108,
            duration_cap: DAY_STEPS,
            include_hd: false,
        }
    }
}

/// Error figures comparing a generated corpus against a reference corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// RMSE of aggregated state-probability curves, percentage points.
    pub sp_rmse: f64,
    /// RMSE of normalized duration histograms, percentage points.
    pub sd_rmse: f64,
    /// RMSE of mean autocorrelation curves (unitless).
    pub ac_rmse: f64,
    /// Mean absolute difference of per-state mean episode counts.
    pub na_mae: f64,
    /// Mean absolute per-bin count difference of the Hamming histograms;
    /// requires equal corpus sizes, `None` for day-level comparisons.
    pub hd_mae: Option<f64>,
    pub generated_count: usize,
    pub reference_count: usize,
    /// States skipped in `ac_rmse` because every person had a constant
    /// indicator in one of the corpora.
    pub ac_states_skipped: Vec<u16>,
    pub per_state: Vec<StateMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMetrics {
    pub state: u16,
    pub sp_rmse: f64,
    pub sd_rmse: f64,
    pub ac_rmse: Option<f64>,
    pub na_generated: f64,
    pub na_reference: f64,
}

/// Mean and quartile autocorrelation curves over persons at lags
/// `1..=max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct Autocorrelation {
    pub mean: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
    /// Persons entering the aggregate.
    pub included: usize,
    /// Persons excluded for having a constant indicator.
    pub excluded: usize,
}

/// Borrow the raw state sequences of a week corpus.
pub fn week_state_refs(corpus: &WeekCorpus) -> Vec<&[u16]> {
    corpus.weeks.iter().map(|w| w.states.as_slice()).collect()
}

/// Per-state share of sequences in that state at each step:
/// `curves[s][t] = |{i : seq_i[t] = s}| / n`. Columns sum to 1.
pub fn state_probability_curves(seqs: &[&[u16]], states: usize) -> Result<Vec<Vec<f64>>> {
    if seqs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let len = seqs[0].len();
    if seqs.iter().any(|s| s.len() != len) {
        return Err(Error::InvalidArgument(
            "state probability curves need uniform sequence lengths".into(),
        ));
    }
    let mut curves = vec![vec![0.0f64; len]; states];
    for seq in seqs {
        for (t, &code) in seq.iter().enumerate() {
            if (code as usize) >= states {
                return Err(Error::CodeOutOfRange {
                    code,
                    alphabet: "metrics".into(),
                    size: states,
                });
            }
            curves[code as usize][t] += 1.0;
        }
    }
    let inv = 1.0 / seqs.len() as f64;
    for curve in &mut curves {
        for v in curve.iter_mut() {
            *v *= inv;
        }
    }
    Ok(curves)
}

/// Maximal-run lengths per state.
pub fn runs_of(seq: &[u16]) -> Vec<(u16, usize)> {
    let mut runs = Vec::new();
    let mut iter = seq.iter();
    let Some(&first) = iter.next() else {
        return runs;
    };
    let mut state = first;
    let mut len = 1usize;
    for &code in iter {
        if code == state {
            len += 1;
        } else {
            runs.push((state, len));
            state = code;
            len = 1;
        }
    }
    runs.push((state, len));
    runs
}

/// Normalized run-length histogram per state: bin `b` (1-based duration,
/// capped at `cap`) holds the share of that state's runs with length `b`.
/// Runs truncated by the sequence end count as observed.
pub fn duration_histograms(seqs: &[&[u16]], states: usize, cap: usize) -> Result<Vec<Vec<f64>>> {
    if seqs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut hist = vec![vec![0.0f64; cap]; states];
    let mut totals = vec![0usize; states];
    for seq in seqs {
        for (state, len) in runs_of(seq) {
            if (state as usize) >= states {
                return Err(Error::CodeOutOfRange {
                    code: state,
                    alphabet: "metrics".into(),
                    size: states,
                });
            }
            let bin = len.min(cap) - 1;
            hist[state as usize][bin] += 1.0;
            totals[state as usize] += 1;
        }
    }
    for (h, &total) in hist.iter_mut().zip(&totals) {
        if total > 0 {
            let inv = 1.0 / total as f64;
            for v in h.iter_mut() {
                *v *= inv;
            }
        }
    }
    Ok(hist)
}

/// Pearson autocorrelation of one binary indicator sequence at `lag`:
/// the correlation of the two overlapping windows `x[..n-lag]` and
/// `x[lag..]`, each with its own mean. Exactly 1 for a `lag`-periodic
/// indicator; 0 when either window is constant.
fn window_pearson(indicator: &[u8], lag: usize) -> f64 {
    let n = indicator.len() - lag;
    let a = &indicator[..n];
    let b = &indicator[lag..];
    let (mut sa, mut sb, mut sab) = (0u64, 0u64, 0u64);
    for i in 0..n {
        sa += a[i] as u64;
        sb += b[i] as u64;
        sab += (a[i] & b[i]) as u64;
    }
    let nf = n as f64;
    let ma = sa as f64 / nf;
    let mb = sb as f64 / nf;
    // binary: sum of squares equals the sum
    let va = sa as f64 / nf - ma * ma;
    let vb = sb as f64 / nf - mb * mb;
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    let cov = sab as f64 / nf - ma * mb;
    cov / (va * vb).sqrt()
}

/// Autocorrelation curves of the indicator of `state`, aggregated over
/// persons. Persons whose indicator never varies are excluded and counted.
pub fn state_autocorrelation(
    seqs: &[&[u16]],
    state: u16,
    max_lag: usize,
) -> Result<Autocorrelation> {
    if seqs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if seqs.iter().any(|s| s.len() <= max_lag) {
        return Err(Error::InvalidArgument(format!(
            "autocorrelation needs sequences longer than max_lag {max_lag}"
        )));
    }
    let curves: Vec<Option<Vec<f64>>> = seqs
        .par_iter()
        .map(|seq| {
            let indicator: Vec<u8> = seq.iter().map(|&c| u8::from(c == state)).collect();
            let ones: usize = indicator.iter().map(|&v| v as usize).sum();
            if ones == 0 || ones == indicator.len() {
                return None; // constant indicator carries no signal
            }
            Some(
                (1..=max_lag)
                    .map(|lag| window_pearson(&indicator, lag))
                    .collect(),
            )
        })
        .collect();

    let included: Vec<&Vec<f64>> = curves.iter().flatten().collect();
    let excluded = curves.len() - included.len();
    if included.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "every person has a constant indicator for state {state}"
        )));
    }
    let mut mean = vec![0.0f64; max_lag];
    let mut q25 = vec![0.0f64; max_lag];
    let mut q75 = vec![0.0f64; max_lag];
    let mut column = vec![0.0f64; included.len()];
    for lag in 0..max_lag {
        for (i, c) in included.iter().enumerate() {
            column[i] = c[lag];
        }
        mean[lag] = column.iter().sum::<f64>() / column.len() as f64;
        column.sort_by(|a, b| a.total_cmp(b));
        q25[lag] = quantile_sorted(&column, 0.25);
        q75[lag] = quantile_sorted(&column, 0.75);
    }
    Ok(Autocorrelation {
        mean,
        q25,
        q75,
        included: included.len(),
        excluded,
    })
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Mean number of maximal runs (episodes) per state over persons.
pub fn weekly_activity_counts(seqs: &[&[u16]], states: usize) -> Result<Vec<f64>> {
    if seqs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts = vec![0.0f64; states];
    for seq in seqs {
        for (state, _) in runs_of(seq) {
            if (state as usize) >= states {
                return Err(Error::CodeOutOfRange {
                    code: state,
                    alphabet: "metrics".into(),
                    size: states,
                });
            }
            counts[state as usize] += 1.0;
        }
    }
    let inv = 1.0 / seqs.len() as f64;
    for c in &mut counts {
        *c *= inv;
    }
    Ok(counts)
}

/// Hamming distance: number of steps at which two equal-length day slices
/// differ.
pub fn hamming(a: &[u16], b: &[u16]) -> usize {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Histogram (bins 0..=144) of Hamming distances over all C(5,2) = 10
/// working-day pairs of every person. Total count is exactly
/// `10 * persons`.
pub fn hamming_distribution(seqs: &[&[u16]]) -> Result<Vec<u64>> {
    if seqs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if seqs.iter().any(|s| s.len() != WEEK_STEPS) {
        return Err(Error::InvalidArgument(
            "hamming distribution needs full 1008-step weeks".into(),
        ));
    }
    let partial: Vec<Vec<u64>> = seqs
        .par_iter()
        .map(|seq| {
            let mut bins = vec![0u64; DAY_STEPS + 1];
            for a in 0..5 {
                for b in (a + 1)..5 {
                    let day_a = &seq[a * DAY_STEPS..(a + 1) * DAY_STEPS];
                    let day_b = &seq[b * DAY_STEPS..(b + 1) * DAY_STEPS];
                    bins[hamming(day_a, day_b)] += 1;
                }
            }
            bins
        })
        .collect();
    let mut bins = vec![0u64; DAY_STEPS + 1];
    for p in partial {
        for (acc, v) in bins.iter_mut().zip(p) {
            *acc += v;
        }
    }
    Ok(bins)
}

/// Draw `n` items with replacement, deterministically per seed. Used to
/// equalize corpus sizes before Hamming comparison.
pub fn resample<T: Clone>(items: &[T], n: usize, seed: u64) -> Vec<T> {
    use rand::Rng;
    let mut rng = rng_stream(seed, &[u64::from_le_bytes(*b"resample")]);
    (0..n)
        .map(|_| items[rng.random_range(0..items.len())].clone())
        .collect()
}

fn rmse(diff_sq_sum: f64, count: usize) -> f64 {
    (diff_sq_sum / count as f64).sqrt()
}

/// Compare a generated corpus against a reference corpus.
pub fn compare(
    generated: &[&[u16]],
    reference: &[&[u16]],
    opts: &CompareOptions,
) -> Result<MetricsReport> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if generated[0].len() != reference[0].len() {
        return Err(Error::InvalidArgument(format!(
            "sequence lengths differ: generated {}, reference {}",
            generated[0].len(),
            reference[0].len()
        )));
    }
    let k = opts.states;

    let sp_gen = state_probability_curves(generated, k)?;
    let sp_ref = state_probability_curves(reference, k)?;
    let sd_gen = duration_histograms(generated, k, opts.duration_cap)?;
    let sd_ref = duration_histograms(reference, k, opts.duration_cap)?;
    let na_gen = weekly_activity_counts(generated, k)?;
    let na_ref = weekly_activity_counts(reference, k)?;

    let mut per_state = Vec::with_capacity(k);
    let mut sp_sq = 0.0;
    let mut sd_sq = 0.0;
    let mut na_sum = 0.0;
    let mut ac_sq = 0.0;
    let mut ac_terms = 0usize;
    let mut ac_states_skipped = Vec::new();

    for s in 0..k {
        let sp_state_sq: f64 = sp_gen[s]
            .iter()
            .zip(&sp_ref[s])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        sp_sq += sp_state_sq;
        let sd_state_sq: f64 = sd_gen[s]
            .iter()
            .zip(&sd_ref[s])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        sd_sq += sd_state_sq;
        na_sum += (na_gen[s] - na_ref[s]).abs();

        let ac_pair = match (
            state_autocorrelation(generated, s as u16, opts.max_lag),
            state_autocorrelation(reference, s as u16, opts.max_lag),
        ) {
            (Ok(g), Ok(r)) => Some((g, r)),
            _ => {
                ac_states_skipped.push(s as u16);
                None
            }
        };
        let ac_state = ac_pair.map(|(g, r)| {
            let sq: f64 = g
                .mean
                .iter()
                .zip(&r.mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            ac_sq += sq;
            ac_terms += opts.max_lag;
            rmse(sq, opts.max_lag)
        });

        per_state.push(StateMetrics {
            state: s as u16,
            sp_rmse: rmse(sp_state_sq, sp_gen[s].len()) * 100.0,
            sd_rmse: rmse(sd_state_sq, opts.duration_cap) * 100.0,
            ac_rmse: ac_state,
            na_generated: na_gen[s],
            na_reference: na_ref[s],
        });
    }

    let hd_mae = if opts.include_hd {
        if generated.len() != reference.len() {
            return Err(Error::InvalidArgument(format!(
                "hamming comparison needs equal corpus sizes, got {} vs {} \
                 (resample one side first)",
                generated.len(),
                reference.len()
            )));
        }
        let hd_gen = hamming_distribution(generated)?;
        let hd_ref = hamming_distribution(reference)?;
        let sum: f64 = hd_gen
            .iter()
            .zip(&hd_ref)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum();
        Some(sum / hd_gen.len() as f64)
    } else {
        None
    };

    Ok(MetricsReport {
        sp_rmse: rmse(sp_sq, k * sp_gen[0].len()) * 100.0,
        sd_rmse: rmse(sd_sq, k * opts.duration_cap) * 100.0,
        ac_rmse: if ac_terms == 0 {
            0.0
        } else {
            rmse(ac_sq, ac_terms)
        },
        na_mae: na_sum / k as f64,
        hd_mae,
        generated_count: generated.len(),
        reference_count: reference.len(),
        ac_states_skipped,
        per_state,
    })
}
