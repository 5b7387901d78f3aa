//! First-order, time-inhomogeneous Markov chain over mobility states: the
//! reference model. One 6x6 transition matrix per week step (wrapping at the
//! week end), optionally stratified by (age, occupation) cell.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::domain::{
    validate_schedule, PersonAttributes, StateAlphabet, WeekCorpus, WeeklySchedule, WEEK_STEPS,
};
use crate::sampling::sample_categorical;
use crate::util::rng_stream;
use crate::{Error, Result};

/// Minimum persons in an (age, occupation) cell to earn its own chain.
pub const STRATUM_MIN_PERSONS: usize = 30;

const TAG_SAMPLE: u64 = 0x6d6b7673; // "mkvs"

/// One chain: initial distribution plus per-step transition matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    states: usize,
    /// Initial distribution at step 0.
    pub pi: Vec<f64>,
    /// Row-stochastic `P[t][i][j]`, flattened `t * k * k + i * k + j`,
    /// for `t` in `0..1008` (the last matrix models the wrap to step 0).
    pub trans: Vec<f64>,
}

impl MarkovChain {
    pub fn states(&self) -> usize {
        self.states
    }

    /// Rebuild a chain from checkpoint data.
    pub fn from_parts(states: usize, pi: Vec<f64>, trans: Vec<f64>) -> Result<Self> {
        if pi.len() != states || trans.len() != WEEK_STEPS * states * states {
            return Err(Error::ShapeMismatch {
                op: "markov_from_parts",
                detail: format!(
                    "pi {} / trans {} for {states} states",
                    pi.len(),
                    trans.len()
                ),
            });
        }
        Ok(Self { states, pi, trans })
    }

    pub fn transition(&self, t: usize, from: u16, to: u16) -> f64 {
        let k = self.states;
        self.trans[t * k * k + from as usize * k + to as usize]
    }

    fn fit(weeks: &[&WeeklySchedule], states: usize, alpha: f64) -> Self {
        let k = states;
        let mut counts = vec![0u64; WEEK_STEPS * k * k];
        let mut pi_counts = vec![0u64; k];
        for week in weeks {
            pi_counts[week.states[0] as usize] += 1;
            for t in 0..WEEK_STEPS {
                let from = week.states[t] as usize;
                let to = week.states[(t + 1) % WEEK_STEPS] as usize;
                counts[t * k * k + from * k + to] += 1;
            }
        }
        let n = weeks.len() as f64;
        let pi: Vec<f64> = pi_counts.iter().map(|&c| c as f64 / n).collect();
        let mut trans = vec![0.0f64; WEEK_STEPS * k * k];
        for t in 0..WEEK_STEPS {
            for i in 0..k {
                let row = &counts[t * k * k + i * k..t * k * k + (i + 1) * k];
                let total: u64 = row.iter().sum();
                let out = &mut trans[t * k * k + i * k..t * k * k + (i + 1) * k];
                if total == 0 && alpha == 0.0 {
                    // state never observed at this step: uniform fallback
                    out.fill(1.0 / k as f64);
                } else {
                    let denom = total as f64 + k as f64 * alpha;
                    for (o, &c) in out.iter_mut().zip(row) {
                        *o = (c as f64 + alpha) / denom;
                    }
                }
            }
        }
        Self {
            states: k,
            pi,
            trans,
        }
    }

    fn sample_week(&self, rng: &mut impl rand::Rng) -> Vec<u16> {
        let k = self.states;
        let mut states = Vec::with_capacity(WEEK_STEPS);
        let mut current = sample_categorical(&self.pi, rng);
        states.push(current as u16);
        for t in 0..WEEK_STEPS - 1 {
            let row = &self.trans[t * k * k + current * k..t * k * k + (current + 1) * k];
            current = sample_categorical(row, rng);
            states.push(current as u16);
        }
        states
    }
}

/// Fitted baseline: a pooled chain, per-cell chains for populous cells, and
/// the empirical attribute pool used to condition sampling.
#[derive(Debug, Clone)]
pub struct MarkovModel {
    pub alphabet: StateAlphabet,
    pub alpha: f64,
    pub pooled: MarkovChain,
    pub strata: BTreeMap<(u8, u8), MarkovChain>,
    pub attribute_pool: Vec<PersonAttributes>,
}

impl MarkovModel {
    /// Chain used for a person with the given attributes.
    pub fn chain_for(&self, age_class: u8, occupation_class: u8) -> &MarkovChain {
        self.strata
            .get(&(age_class, occupation_class))
            .unwrap_or(&self.pooled)
    }
}

/// Fit per-step transition frequencies with additive (Laplace) smoothing
/// `alpha`; `alpha = 0` reproduces raw frequencies exactly.
pub fn fit_markov(corpus: &WeekCorpus, alpha: f64) -> Result<MarkovModel> {
    if corpus.weeks.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "smoothing alpha must be non-negative, got {alpha}"
        )));
    }
    let k = corpus.alphabet.size();
    for week in &corpus.weeks {
        let violations = validate_schedule(week, &corpus.alphabet);
        if !violations.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "invalid schedule for person {}: {:?}",
                week.attributes.person_id, violations[0]
            )));
        }
    }

    let all: Vec<&WeeklySchedule> = corpus.weeks.iter().collect();
    let pooled = MarkovChain::fit(&all, k, alpha);

    let mut cells: BTreeMap<(u8, u8), Vec<&WeeklySchedule>> = BTreeMap::new();
    for week in &corpus.weeks {
        cells
            .entry((week.attributes.age_class, week.attributes.occupation_class))
            .or_default()
            .push(week);
    }
    let strata: BTreeMap<(u8, u8), MarkovChain> = cells
        .into_iter()
        .filter(|(_, weeks)| weeks.len() >= STRATUM_MIN_PERSONS)
        .map(|(cell, weeks)| (cell, MarkovChain::fit(&weeks, k, alpha)))
        .collect();

    Ok(MarkovModel {
        alphabet: corpus.alphabet.clone(),
        alpha,
        pooled,
        strata,
        attribute_pool: corpus.weeks.iter().map(|w| w.attributes.clone()).collect(),
    })
}

/// Sample `n` weeks; attributes are drawn from the fitted corpus and pick
/// the matching stratum chain. Deterministic per `(seed, index)`.
pub fn sample_markov(model: &MarkovModel, n: usize, seed: u64) -> Result<Vec<WeeklySchedule>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_stream(seed, &[TAG_SAMPLE, i as u64]);
            let attrs_src =
                &model.attribute_pool[rng.random_range(0..model.attribute_pool.len())];
            let chain = model.chain_for(attrs_src.age_class, attrs_src.occupation_class);
            let states = chain.sample_week(&mut rng);
            WeeklySchedule {
                attributes: PersonAttributes {
                    person_id: format!("markov-{i:05}"),
                    age_class: attrs_src.age_class,
                    occupation_class: attrs_src.occupation_class,
                },
                states,
            }
        })
        .collect())
}
