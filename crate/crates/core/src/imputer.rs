//! Imputation model: learns at-home activities from day diaries, then
//! enriches mobility schedules by replacing "at home" steps with one of ten
//! activities, revealed chronologically.
//!
//! Training is a single pass per sample: every at-home position carries a
//! placeholder token (its true activity appears only as the target), away
//! tokens pass through unchanged, and the attention mask lets a query see
//! all away positions but only strictly earlier at-home positions (plus its
//! own placeholder). At inference the same mask applies while earlier
//! at-home positions hold their already-imputed activities.

use rayon::prelude::*;

use crate::attention::{
    assemble_inputs, encoder_forward, forward_logits, init_params, logits_head,
    positional_encoding, AttentionMask, EncoderConfig, FeatureSpec, ModelParams, SequenceInput,
};
use crate::autodiff::{NodeId, ParamSet, Tape, Tensor};
use crate::domain::{
    validate_schedule, DiaryCorpus, DiarySample, StateAlphabet, WeekCorpus,
    WeeklySchedule, ACTIVITY_STATES, AT_HOME, DAY_STEPS, HOME_ACTIVITIES, WEEK_STEPS,
};
use crate::metrics::{self, CompareOptions, MetricsReport};
use crate::sampling::sample_logits;
use crate::train::{run_training, ModelConfig, TrainReport, TrainTask};
use crate::util::rng_stream;
use crate::{Error, Result};

/// Input token marking an unresolved at-home step.
pub const PLACEHOLDER_TOKEN: u32 = ACTIVITY_STATES as u32;
/// Target value of away rows; they carry no loss.
pub const IGNORE_TARGET: u32 = HOME_ACTIVITIES as u32;
/// Input vocabulary: 15 activity-alphabet states plus the placeholder.
pub const INPUT_VOCAB: usize = ACTIVITY_STATES + 1;

const TAG_IMPUTE: u64 = 0x696d7075; // "impu"
const TAG_EVAL: u64 = 0x65766c73; // "evls"

/// Diary steps start at 04:00; week steps at Monday 00:00. A week step maps
/// to the diary-day clock by shifting 24 steps: steps 00:00-04:00 belong to
/// the tail of the previous diary day (wrapping at the week boundary).
/// Returns `(weekday, within-day position)` — the positional encoding is
/// indexed by the diary-day clock, the weekday embedding carries the day.
pub fn week_step_to_diary(t: usize) -> (u32, u32) {
    let shifted = (t + WEEK_STEPS - 24) % WEEK_STEPS;
    ((shifted / DAY_STEPS) as u32, (shifted % DAY_STEPS) as u32)
}

#[derive(Debug, Clone)]
pub struct ImputerModel {
    pub encoder: EncoderConfig,
    pub features: FeatureSpec,
    pub alphabet: StateAlphabet,
    pub params: ParamSet,
    pub index: ModelParams,
    pub seed: u64,
    pub trained: bool,
    pe: Tensor,
}

impl ImputerModel {
    pub fn init(config: &ModelConfig, alphabet: &StateAlphabet, seed: u64) -> Result<Self> {
        alphabet.validate()?;
        // max_len covers full-week inference; training sees at most 432.
        let encoder = config.encoder_config(WEEK_STEPS);
        let features = FeatureSpec::for_d_model(encoder.d_model);
        let (params, index) = init_params(&encoder, &features, INPUT_VOCAB, HOME_ACTIVITIES, seed)?;
        let pe = positional_encoding(encoder.max_len, encoder.d_model)?;
        Ok(Self {
            encoder,
            features,
            alphabet: alphabet.clone(),
            params,
            index,
            seed,
            trained: false,
            pe,
        })
    }

    pub fn from_parts(
        encoder: EncoderConfig,
        features: FeatureSpec,
        alphabet: StateAlphabet,
        params: ParamSet,
        seed: u64,
        trained: bool,
    ) -> Result<Self> {
        encoder.validate()?;
        alphabet.validate()?;
        if params.len() != ModelParams::tensor_count(encoder.layers) {
            return Err(Error::ShapeMismatch {
                op: "imputer_from_parts",
                detail: format!("{} tensors for {} layers", params.len(), encoder.layers),
            });
        }
        let pe = positional_encoding(encoder.max_len, encoder.d_model)?;
        let index = ModelParams::layout(encoder.layers);
        Ok(Self {
            encoder,
            features,
            alphabet,
            params,
            index,
            seed,
            trained,
            pe,
        })
    }

    /// Replace the at-home steps of a mobility week with activities,
    /// chronologically: each reveal runs a full forward pass with already
    /// imputed activities as inputs and placeholders from the current step
    /// on. Away steps are copied unchanged into the activity alphabet.
    pub fn impute(
        &self,
        week: &WeeklySchedule,
        mobility_alphabet: &StateAlphabet,
        seed: u64,
        temperature: f64,
    ) -> Result<WeeklySchedule> {
        if !self.trained {
            return Err(Error::UntrainedModel);
        }
        let violations = validate_schedule(week, mobility_alphabet);
        if !violations.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "invalid mobility week for {}: {:?}",
                week.attributes.person_id, violations[0]
            )));
        }
        let mut tokens: Vec<u32> = Vec::with_capacity(WEEK_STEPS);
        let mut home = Vec::with_capacity(WEEK_STEPS);
        let mut weekdays = Vec::with_capacity(WEEK_STEPS);
        let mut positions = Vec::with_capacity(WEEK_STEPS);
        for (t, &state) in week.states.iter().enumerate() {
            let is_home = state == AT_HOME;
            home.push(is_home);
            tokens.push(if is_home {
                PLACEHOLDER_TOKEN
            } else {
                StateAlphabet::away_code_to_activity(state) as u32
            });
            let (weekday, position) = week_step_to_diary(t);
            weekdays.push(weekday);
            positions.push(position);
        }
        let mut rng = rng_stream(seed, &[TAG_IMPUTE]);
        self.impute_tokens(
            &mut tokens,
            &home,
            &weekdays,
            &positions,
            week.attributes.age_class,
            week.attributes.occupation_class,
            temperature,
            &mut rng,
        )?;
        Ok(WeeklySchedule {
            attributes: week.attributes.clone(),
            states: tokens.into_iter().map(|t| t as u16).collect(),
        })
    }

    /// Training-style loss and accuracy of one diary sample under the
    /// current parameters (eval mode, single pass).
    pub fn sample_loss(&self, sample: &DiarySample) -> Result<(f64, f64)> {
        let prep = prepare_diary(sample).ok_or(Error::NoAtHomeSteps)?;
        let task = ImputerTask {
            model: self,
            train: vec![],
            val: vec![prep],
        };
        let (loss, correct, total) = task.eval_sample(&self.params, 0)?;
        Ok((loss, correct as f64 / total.max(1) as f64))
    }

    /// Chronological reveal over an arbitrary token sequence; used by both
    /// week imputation and diary re-imputation.
    #[allow(clippy::too_many_arguments)]
    fn impute_tokens(
        &self,
        tokens: &mut [u32],
        home: &[bool],
        weekdays: &[u32],
        positions: &[u32],
        age_class: u8,
        occupation_class: u8,
        temperature: f64,
        rng: &mut impl rand::Rng,
    ) -> Result<()> {
        let mask = AttentionMask::imputation(home, true);
        for t in 0..tokens.len() {
            if !home[t] {
                continue;
            }
            let input = SequenceInput {
                tokens: tokens.to_vec(),
                weekdays: weekdays.to_vec(),
                positions: positions.to_vec(),
                age_class,
                occupation_class,
            };
            let logits =
                forward_logits(&self.params, &self.index, &self.encoder, &input, &mask, &self.pe)?;
            let activity = sample_logits(logits.row(t), temperature, rng)?;
            tokens[t] = activity as u32;
        }
        Ok(())
    }
}

/// One diary sample prepared for the single-pass training scheme.
struct PreparedDiary {
    input: SequenceInput,
    targets: Vec<u32>,
    mask: AttentionMask,
}

fn prepare_diary(sample: &DiarySample) -> Option<PreparedDiary> {
    let days = sample.ordered_days();
    let len = days.len() * DAY_STEPS;
    let mut tokens = Vec::with_capacity(len);
    let mut targets = Vec::with_capacity(len);
    let mut weekdays = Vec::with_capacity(len);
    let mut home = Vec::with_capacity(len);
    for day in days {
        for &code in &day.states {
            let is_home = (code as usize) < HOME_ACTIVITIES;
            home.push(is_home);
            tokens.push(if is_home { PLACEHOLDER_TOKEN } else { code as u32 });
            targets.push(if is_home { code as u32 } else { IGNORE_TARGET });
            weekdays.push(day.weekday as u32);
        }
    }
    if !home.iter().any(|&h| h) {
        return None; // nothing to learn from
    }
    let mask = AttentionMask::imputation(&home, true);
    Some(PreparedDiary {
        input: SequenceInput {
            tokens,
            weekdays,
            positions: (0..len).map(|i| (i % DAY_STEPS) as u32).collect(),
            age_class: sample.attributes.age_class,
            occupation_class: sample.attributes.occupation_class,
        },
        targets,
        mask,
    })
}

struct ImputerTask<'a> {
    model: &'a ImputerModel,
    train: Vec<PreparedDiary>,
    val: Vec<PreparedDiary>,
}

struct ForwardNodes {
    ids: Vec<NodeId>,
    logits: NodeId,
    loss: NodeId,
}

impl ImputerTask<'_> {
    fn forward_loss(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        sample: &PreparedDiary,
        train: bool,
        dropout_seed: u64,
    ) -> Result<ForwardNodes> {
        let ids: Vec<_> = if train {
            params.load(tape)
        } else {
            params
                .tensors()
                .iter()
                .map(|t| tape.leaf(t.clone(), false))
                .collect()
        };
        let mut rng = rng_stream(dropout_seed, &[]);
        let x = assemble_inputs(tape, &ids, &self.model.index, &sample.input, &self.model.pe)?;
        let enc = encoder_forward(
            tape,
            &ids,
            &self.model.index,
            &self.model.encoder,
            x,
            &sample.mask,
            train,
            &mut rng,
        )?;
        let logits = logits_head(tape, &ids, &self.model.index, enc)?;
        let loss = tape.cross_entropy(logits, &sample.targets, Some(IGNORE_TARGET))?;
        Ok(ForwardNodes { ids, logits, loss })
    }
}

impl TrainTask for ImputerTask<'_> {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn val_len(&self) -> usize {
        self.val.len()
    }

    fn grad_sample(
        &self,
        params: &ParamSet,
        sample: usize,
        dropout_seed: u64,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let nodes =
            self.forward_loss(&mut tape, params, &self.train[sample], true, dropout_seed)?;
        let mut grads = tape.backward(nodes.loss)?;
        Ok((
            tape.value(nodes.loss).item(),
            params.collect_grads(&nodes.ids, &mut grads),
        ))
    }

    fn eval_sample(&self, params: &ParamSet, sample: usize) -> Result<(f64, usize, usize)> {
        let prepared = &self.val[sample];
        let mut tape = Tape::new();
        let nodes = self.forward_loss(&mut tape, params, prepared, false, 0)?;
        let logits = tape.value(nodes.logits);
        let mut correct = 0usize;
        let mut total = 0usize;
        for (t, &target) in prepared.targets.iter().enumerate() {
            if target == IGNORE_TARGET {
                continue;
            }
            total += 1;
            if crate::sampling::argmax(logits.row(t)) == target as usize {
                correct += 1;
            }
        }
        Ok((tape.value(nodes.loss).item(), correct, total))
    }
}

/// Train on the eight non-validation folds of `split`. Samples without a
/// single at-home step are dropped; a corpus with none at all is an error.
pub fn train_imputer(
    corpus: &DiaryCorpus,
    split: &crate::domain::SplitPlan,
    fold: usize,
    config: &ModelConfig,
    seed: u64,
) -> Result<(ImputerModel, TrainReport)> {
    config.validate()?;
    if fold >= split.folds.len() {
        return Err(Error::InvalidArgument(format!(
            "fold {fold} out of range ({} folds)",
            split.folds.len()
        )));
    }
    for sample in &corpus.samples {
        let violations = sample.validate(&corpus.alphabet);
        if !violations.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "invalid diary for person {}: {:?}",
                sample.attributes.person_id, violations[0]
            )));
        }
    }

    let train_ids: std::collections::BTreeSet<&str> =
        split.training_ids(fold).into_iter().collect();
    let val_ids: std::collections::BTreeSet<&str> = split
        .validation_ids(fold)
        .iter()
        .map(|s| s.as_str())
        .collect();
    let train: Vec<PreparedDiary> = corpus
        .samples
        .iter()
        .filter(|s| train_ids.contains(s.attributes.person_id.as_str()))
        .filter_map(prepare_diary)
        .collect();
    let val: Vec<PreparedDiary> = corpus
        .samples
        .iter()
        .filter(|s| val_ids.contains(s.attributes.person_id.as_str()))
        .filter_map(prepare_diary)
        .collect();
    if train.is_empty() {
        return Err(Error::NoAtHomeSteps);
    }

    let mut model = ImputerModel::init(config, &corpus.alphabet, seed)?;
    let task = ImputerTask {
        model: &model,
        train,
        val,
    };
    let mut params = model.params.clone();
    let report = run_training(&task, &mut params, config, seed)?;
    model.params = params;
    model.trained = true;
    Ok((model, report))
}

/// Re-impute `n` diary skeletons resampled from the reference and score the
/// imputed days against the reference days (no Hamming column at day level).
pub fn evaluate_imputer(
    model: &ImputerModel,
    reference: &DiaryCorpus,
    n: usize,
    seed: u64,
) -> Result<MetricsReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    if reference.samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !model.trained {
        return Err(Error::UntrainedModel);
    }
    let picked = metrics::resample(&reference.samples, n, seed);
    let imputed_days: Vec<Vec<u16>> = picked
        .par_iter()
        .enumerate()
        .map(|(i, sample)| -> Result<Vec<Vec<u16>>> {
            let Some(prep) = prepare_diary(sample) else {
                // no at-home steps: days pass through unchanged
                return Ok(sample
                    .ordered_days()
                    .iter()
                    .map(|d| d.states.clone())
                    .collect());
            };
            let mut tokens = prep.input.tokens.clone();
            let home: Vec<bool> = tokens.iter().map(|&t| t == PLACEHOLDER_TOKEN).collect();
            let mut rng = rng_stream(seed, &[TAG_EVAL, i as u64]);
            model.impute_tokens(
                &mut tokens,
                &home,
                &prep.input.weekdays,
                &prep.input.positions,
                prep.input.age_class,
                prep.input.occupation_class,
                1.0,
                &mut rng,
            )?;
            Ok(tokens
                .chunks(DAY_STEPS)
                .map(|day| day.iter().map(|&t| t as u16).collect())
                .collect())
        })
        .collect::<Result<Vec<Vec<Vec<u16>>>>>()?
        .into_iter()
        .flatten()
        .collect();

    let reference_days: Vec<Vec<u16>> = reference
        .samples
        .iter()
        .flat_map(|s| s.ordered_days().into_iter().map(|d| d.states.clone()))
        .collect();

    let gen_refs: Vec<&[u16]> = imputed_days.iter().map(|d| d.as_slice()).collect();
    let ref_refs: Vec<&[u16]> = reference_days.iter().map(|d| d.as_slice()).collect();
    metrics::compare(&gen_refs, &ref_refs, &CompareOptions::days(ACTIVITY_STATES))
}

/// Impute every week of a mobility corpus, producing an activity corpus.
pub fn impute_corpus(
    model: &ImputerModel,
    weeks: &WeekCorpus,
    seed: u64,
    temperature: f64,
) -> Result<WeekCorpus> {
    let imputed: Vec<WeeklySchedule> = weeks
        .weeks
        .par_iter()
        .enumerate()
        .map(|(i, week)| {
            model.impute(
                week,
                &weeks.alphabet,
                crate::util::derive_seed(seed, &[i as u64]),
                temperature,
            )
        })
        .collect::<Result<_>>()?;
    Ok(WeekCorpus {
        alphabet: model.alphabet.clone(),
        weeks: imputed,
    })
}
