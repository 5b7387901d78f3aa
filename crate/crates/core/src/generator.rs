//! Autoregressive mobility model: trains on week-long schedules with teacher
//! forcing under a causal mask, then samples synthetic weeks step by step,
//! conditioned on age and occupation class.

use rayon::prelude::*;

use crate::attention::{
    assemble_inputs, encoder_forward, init_params, logits_head, positional_encoding,
    AttentionMask, EncoderConfig, FeatureSpec, IncrementalDecoder, ModelParams, SequenceInput,
};
use crate::autodiff::{ParamSet, Tape, Tensor};
use crate::domain::{
    validate_schedule, PersonAttributes, SplitPlan, StateAlphabet, WeekCorpus, WeeklySchedule,
    DAY_STEPS, MOBILITY_STATES, WEEK_STEPS,
};
use crate::metrics::{self, CompareOptions, MetricsReport};
use crate::sampling::sample_logits;
use crate::train::{run_training, ModelConfig, TrainReport, TrainTask};
use crate::util::{derive_seed, rng_stream};
use crate::{Error, Result};

/// Start-of-week token: one extra learned row in the state embedding table,
/// used as the input at position 0.
pub const BOS_TOKEN: u32 = MOBILITY_STATES as u32;

const TAG_GEN: u64 = 0x67656e73; // "gens"
const TAG_ATTRS: u64 = 0x61747472; // "attr"

#[derive(Debug, Clone)]
pub struct GeneratorModel {
    pub encoder: EncoderConfig,
    pub features: FeatureSpec,
    pub alphabet: StateAlphabet,
    pub params: ParamSet,
    pub index: ModelParams,
    pub seed: u64,
    pub trained: bool,
    pe: Tensor,
}

impl GeneratorModel {
    /// Fresh untrained model with randomly initialized parameters.
    pub fn init(config: &ModelConfig, alphabet: &StateAlphabet, seed: u64) -> Result<Self> {
        alphabet.validate()?;
        let encoder = config.encoder_config(WEEK_STEPS);
        let features = FeatureSpec::for_d_model(encoder.d_model);
        let vocab = alphabet.size() + 1; // states plus BOS
        let (params, index) = init_params(&encoder, &features, vocab, alphabet.size(), seed)?;
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

    /// Rebuild a model from checkpoint parts.
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
                op: "generator_from_parts",
                detail: format!(
                    "{} tensors for {} layers",
                    params.len(),
                    encoder.layers
                ),
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

    /// Teacher-forcing input for one week: position `t` holds the state of
    /// `t - 1` (BOS at 0) plus the weekday and person features of `t`.
    ///
    /// The positional encoding is indexed by time-of-day (`t mod 144`): the
    /// weekday embedding carries the day axis, so identical times of day
    /// share identical timestamp features across days. This is what lets
    /// attention express "the same time yesterday" directly.
    fn teacher_input(&self, week: &WeeklySchedule) -> SequenceInput {
        let mut tokens = Vec::with_capacity(WEEK_STEPS);
        tokens.push(BOS_TOKEN);
        tokens.extend(week.states[..WEEK_STEPS - 1].iter().map(|&s| s as u32));
        SequenceInput {
            tokens,
            weekdays: (0..WEEK_STEPS).map(|t| (t / DAY_STEPS) as u32).collect(),
            positions: (0..WEEK_STEPS).map(|t| (t % DAY_STEPS) as u32).collect(),
            age_class: week.attributes.age_class,
            occupation_class: week.attributes.occupation_class,
        }
    }

    /// Mean next-state cross entropy of one week under teacher forcing.
    /// Exposed for loss probes; training uses the same path.
    pub fn sequence_loss(&self, week: &WeeklySchedule) -> Result<f64> {
        let input = self.teacher_input(week);
        let targets: Vec<u32> = week.states.iter().map(|&s| s as u32).collect();
        let mask = AttentionMask::causal(WEEK_STEPS);
        let mut tape = Tape::new();
        let ids: Vec<_> = self
            .params
            .tensors()
            .iter()
            .map(|t| tape.leaf(t.clone(), false))
            .collect();
        let mut rng = rng_stream(0, &[]);
        let x = assemble_inputs(&mut tape, &ids, &self.index, &input, &self.pe)?;
        let enc = encoder_forward(
            &mut tape,
            &ids,
            &self.index,
            &self.encoder,
            x,
            &mask,
            false,
            &mut rng,
        )?;
        let logits = logits_head(&mut tape, &ids, &self.index, enc)?;
        let loss = tape.cross_entropy(logits, &targets, None)?;
        Ok(tape.value(loss).item())
    }

    /// Sample `n` weeks for one attribute vector. Streams are derived per
    /// `(seed, index)`, so any prefix of a larger run is reproducible.
    pub fn generate(
        &self,
        attrs: &PersonAttributes,
        n: usize,
        seed: u64,
        temperature: f64,
    ) -> Result<Vec<WeeklySchedule>> {
        let list = vec![attrs.clone(); n];
        self.generate_with_attrs(&list, seed, temperature)
    }

    /// Sample one week per attribute vector.
    pub fn generate_with_attrs(
        &self,
        attrs_list: &[PersonAttributes],
        seed: u64,
        temperature: f64,
    ) -> Result<Vec<WeeklySchedule>> {
        if !self.trained {
            return Err(Error::UntrainedModel);
        }
        if attrs_list.is_empty() {
            return Err(Error::InvalidArgument("nothing to generate".into()));
        }
        if temperature < 0.0 || !temperature.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature must be non-negative, got {temperature}"
            )));
        }
        attrs_list
            .par_iter()
            .enumerate()
            .map(|(i, attrs)| {
                let mut rng = rng_stream(seed, &[TAG_GEN, i as u64]);
                let mut decoder = IncrementalDecoder::new(
                    &self.params,
                    &self.index,
                    &self.encoder,
                    &self.pe,
                    attrs.age_class,
                    attrs.occupation_class,
                );
                let mut states = Vec::with_capacity(WEEK_STEPS);
                let mut token = BOS_TOKEN;
                for t in 0..WEEK_STEPS {
                    let logits =
                        decoder.step(token, (t / DAY_STEPS) as u32, (t % DAY_STEPS) as u32)?;
                    let next = sample_logits(&logits, temperature, &mut rng)? as u16;
                    states.push(next);
                    token = next as u32;
                }
                Ok(WeeklySchedule {
                    attributes: PersonAttributes {
                        person_id: format!("gen-{i:05}"),
                        age_class: attrs.age_class,
                        occupation_class: attrs.occupation_class,
                    },
                    states,
                })
            })
            .collect()
    }
}

struct PreparedWeek {
    input: SequenceInput,
    targets: Vec<u32>,
}

struct ForwardNodes {
    ids: Vec<crate::autodiff::NodeId>,
    logits: crate::autodiff::NodeId,
    loss: crate::autodiff::NodeId,
}

struct GeneratorTask<'a> {
    model: &'a GeneratorModel,
    mask: AttentionMask,
    train: Vec<PreparedWeek>,
    val: Vec<PreparedWeek>,
}

impl GeneratorTask<'_> {
    fn forward_loss(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        sample: &PreparedWeek,
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
            &self.mask,
            train,
            &mut rng,
        )?;
        let logits = logits_head(tape, &ids, &self.model.index, enc)?;
        let loss = tape.cross_entropy(logits, &sample.targets, None)?;
        Ok(ForwardNodes { ids, logits, loss })
    }
}

impl TrainTask for GeneratorTask<'_> {
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
        let loss_value = tape.value(nodes.loss).item();
        let logits = tape.value(nodes.logits);
        let mut correct = 0usize;
        for (t, &target) in prepared.targets.iter().enumerate() {
            if crate::sampling::argmax(logits.row(t)) == target as usize {
                correct += 1;
            }
        }
        Ok((loss_value, correct, prepared.targets.len()))
    }
}

fn prepare(model: &GeneratorModel, weeks: Vec<&WeeklySchedule>) -> Vec<PreparedWeek> {
    weeks
        .into_iter()
        .map(|week| PreparedWeek {
            input: model.teacher_input(week),
            targets: week.states.iter().map(|&s| s as u32).collect(),
        })
        .collect()
}

/// Train on the eight non-validation folds of `split`, early-stopping on
/// fold `fold`. Deterministic per seed.
pub fn train_generator(
    corpus: &WeekCorpus,
    split: &SplitPlan,
    fold: usize,
    config: &ModelConfig,
    seed: u64,
) -> Result<(GeneratorModel, TrainReport)> {
    config.validate()?;
    if fold >= split.folds.len() {
        return Err(Error::InvalidArgument(format!(
            "fold {fold} out of range ({} folds)",
            split.folds.len()
        )));
    }
    for week in &corpus.weeks {
        let violations = validate_schedule(week, &corpus.alphabet);
        if !violations.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "invalid schedule for person {}: {:?}",
                week.attributes.person_id, violations[0]
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
    let train_weeks: Vec<&WeeklySchedule> = corpus
        .weeks
        .iter()
        .filter(|w| train_ids.contains(w.attributes.person_id.as_str()))
        .collect();
    let val_weeks: Vec<&WeeklySchedule> = corpus
        .weeks
        .iter()
        .filter(|w| val_ids.contains(w.attributes.person_id.as_str()))
        .collect();
    if train_weeks.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "training fold {fold} selects no schedules"
        )));
    }

    let mut model = GeneratorModel::init(config, &corpus.alphabet, seed)?;
    let task = GeneratorTask {
        model: &model,
        mask: AttentionMask::causal(WEEK_STEPS),
        train: prepare(&model, train_weeks),
        val: prepare(&model, val_weeks),
    };
    let mut params = model.params.clone();
    let report = run_training(&task, &mut params, config, seed)?;
    model.params = params;
    model.trained = true;
    Ok((model, report))
}

/// Generate `n` schedules with attributes resampled from the reference and
/// score them against the reference corpus.
pub fn evaluate_generator(
    model: &GeneratorModel,
    reference: &WeekCorpus,
    n: usize,
    seed: u64,
) -> Result<MetricsReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    if reference.weeks.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let attr_pool: Vec<PersonAttributes> = reference
        .weeks
        .iter()
        .map(|w| w.attributes.clone())
        .collect();
    let attrs = metrics::resample(&attr_pool, n, derive_seed(seed, &[TAG_ATTRS]));
    let generated = model.generate_with_attrs(&attrs, seed, 1.0)?;
    compare_to_reference(&generated, reference, seed)
}

/// Compare generated weeks against a reference corpus, equalizing sizes for
/// the Hamming histogram by resampling the reference when needed.
pub fn compare_to_reference(
    generated: &[WeeklySchedule],
    reference: &WeekCorpus,
    seed: u64,
) -> Result<MetricsReport> {
    let gen_refs: Vec<&[u16]> = generated.iter().map(|w| w.states.as_slice()).collect();
    let opts = CompareOptions::weeks(reference.alphabet.size());
    if generated.len() == reference.weeks.len() {
        let ref_refs = metrics::week_state_refs(reference);
        return metrics::compare(&gen_refs, &ref_refs, &opts);
    }
    // sp/sd/ac/na against the full reference; hd against an equal-size resample
    let mut no_hd = opts.clone();
    no_hd.include_hd = false;
    let ref_refs = metrics::week_state_refs(reference);
    let mut report = metrics::compare(&gen_refs, &ref_refs, &no_hd)?;
    let resampled = metrics::resample(&reference.weeks, generated.len(), derive_seed(seed, &[1]));
    let res_refs: Vec<&[u16]> = resampled.iter().map(|w| w.states.as_slice()).collect();
    let hd_gen = metrics::hamming_distribution(&gen_refs)?;
    let hd_ref = metrics::hamming_distribution(&res_refs)?;
    let sum: f64 = hd_gen
        .iter()
        .zip(&hd_ref)
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    report.hd_mae = Some(sum / hd_gen.len() as f64);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_corpus(n: usize) -> WeekCorpus {
        WeekCorpus {
            alphabet: StateAlphabet::default_mobility(),
            weeks: (0..n)
                .map(|i| WeeklySchedule {
                    attributes: PersonAttributes::new(format!("p{i:03}"), 2, 1).unwrap(),
                    states: vec![0; WEEK_STEPS],
                })
                .collect(),
        }
    }

    fn toy_split(n: usize) -> SplitPlan {
        // fold 0 validates on the last two persons, the rest train
        let ids: Vec<String> = (0..n).map(|i| format!("p{i:03}")).collect();
        let mut folds = vec![Vec::new(); 9];
        folds[0] = ids[n - 2..].to_vec();
        for (j, id) in ids[..n - 2].iter().enumerate() {
            folds[1 + j % 8].push(id.clone());
        }
        SplitPlan {
            seed: 0,
            test_ids: vec![],
            folds,
        }
    }

    fn tiny_config() -> ModelConfig {
        let mut config = ModelConfig::new(1, 16, 0.01, 4);
        config.heads = 2;
        config.max_epochs = 5;
        config.patience = 5;
        config
    }

    #[test]
    fn initial_loss_is_near_uniform() {
        let corpus = constant_corpus(4);
        let model = GeneratorModel::init(&tiny_config(), &corpus.alphabet, 3).unwrap();
        let loss = model.sequence_loss(&corpus.weeks[0]).unwrap();
        let ln6 = 6.0f64.ln();
        assert!((loss - ln6).abs() < 0.2, "initial loss {loss} vs ln6 {ln6}");
    }

    #[test]
    fn degenerate_corpus_trains_to_zero_loss() {
        let corpus = constant_corpus(10);
        let mut config = tiny_config();
        config.batch_size = 1;
        config.learning_rate = 0.05;
        let (model, report) = train_generator(&corpus, &toy_split(10), 0, &config, 7).unwrap();
        let final_val = *report.val_loss.last().unwrap();
        assert!(final_val < 0.05, "val loss {final_val}");
        assert!(*report.val_accuracy.last().unwrap() > 0.999);
        // argmax sampling reproduces the constant week
        let attrs = PersonAttributes::new("q", 2, 1).unwrap();
        let weeks = model.generate(&attrs, 2, 5, 0.0).unwrap();
        for w in &weeks {
            assert_eq!(w.states, vec![0u16; WEEK_STEPS]);
        }
    }

    #[test]
    fn training_loss_beats_uniform_after_one_epoch() {
        let corpus = constant_corpus(10);
        let mut config = tiny_config();
        config.max_epochs = 1;
        let (_, report) = train_generator(&corpus, &toy_split(10), 0, &config, 1).unwrap();
        assert!(report.train_loss[0] < 6.0f64.ln());
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = constant_corpus(6);
        let mut config = tiny_config();
        config.max_epochs = 2;
        let split = toy_split(6);
        let (m1, r1) = train_generator(&corpus, &split, 0, &config, 42).unwrap();
        let (m2, r2) = train_generator(&corpus, &split, 0, &config, 42).unwrap();
        assert_eq!(r1, r2);
        for (a, b) in m1.params.tensors().iter().zip(m2.params.tensors()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn generation_contract_and_determinism() {
        let corpus = constant_corpus(6);
        let mut config = tiny_config();
        config.max_epochs = 1;
        let (model, _) = train_generator(&corpus, &toy_split(6), 0, &config, 2).unwrap();
        let attrs = PersonAttributes::new("x", 1, 1).unwrap();
        let a = model.generate(&attrs, 3, 11, 1.0).unwrap();
        let b = model.generate(&attrs, 3, 11, 1.0).unwrap();
        assert_eq!(a, b);
        for w in &a {
            assert_eq!(w.states.len(), WEEK_STEPS);
            assert!(w.states.iter().all(|&s| s < 6));
        }
        assert_ne!(a, model.generate(&attrs, 3, 12, 1.0).unwrap());
        assert!(model.generate(&attrs, 0, 1, 1.0).is_err());
        assert!(model.generate(&attrs, 1, 1, -0.5).is_err());
    }

    #[test]
    fn untrained_model_refuses_to_generate() {
        let model =
            GeneratorModel::init(&tiny_config(), &StateAlphabet::default_mobility(), 1).unwrap();
        let attrs = PersonAttributes::new("x", 0, 0).unwrap();
        assert!(matches!(
            model.generate(&attrs, 1, 0, 1.0),
            Err(Error::UntrainedModel)
        ));
    }

    #[test]
    fn evaluate_self_comparison_of_identical_corpora_is_zero() {
        let corpus = constant_corpus(5);
        let report = compare_to_reference(&corpus.weeks, &corpus, 0).unwrap();
        assert_eq!(report.sp_rmse, 0.0);
        assert_eq!(report.hd_mae, Some(0.0));
    }
}
