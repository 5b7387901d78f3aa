//! Cross-module integration: synthetic corpus through training, sampling,
//! imputation, persistence and evaluation.

use schedsynth::domain::{
    build_split, PersonAttributes, SplitPlan, StateAlphabet, WeeklySchedule, DAY_STEPS,
    HOME_ACTIVITIES, WEEK_STEPS,
};
use schedsynth::generator::{evaluate_generator, train_generator};
use schedsynth::imputer::train_imputer;
use schedsynth::markov::{fit_markov, sample_markov};
use schedsynth::metrics;
use schedsynth::synth::{make_synthetic_corpus, SyntheticSpec};
use schedsynth::train::ModelConfig;
use schedsynth::{io, Error};
use tempfile::tempdir;

fn tiny_gen_config(epochs: usize) -> ModelConfig {
    let mut config = ModelConfig::new(1, 16, 0.01, 8);
    config.heads = 2;
    config.max_epochs = epochs;
    config
}

#[test]
fn generator_checkpoint_round_trip_preserves_outputs() {
    let spec = SyntheticSpec::oracle_default(4.0);
    let (weeks, _) = make_synthetic_corpus(&spec, 40, 3).unwrap();
    let split = build_split(&weeks.person_ids(), 5).unwrap();
    let (model, _) = train_generator(&weeks, &split, 0, &tiny_gen_config(2), 11).unwrap();

    let attrs = PersonAttributes::new("probe", 2, 1).unwrap();
    let before = model.generate(&attrs, 3, 21, 1.0).unwrap();

    let dir = tempdir().unwrap();
    let path = dir.path().join("generator.ckpt");
    io::save_generator(&model, &path).unwrap();
    let loaded = io::load_generator(&path).unwrap();
    let after = loaded.generate(&attrs, 3, 21, 1.0).unwrap();
    assert_eq!(before, after);

    // loss on a probe week is bit-identical too
    let probe = &weeks.weeks[0];
    assert_eq!(
        model.sequence_loss(probe).unwrap().to_bits(),
        loaded.sequence_loss(probe).unwrap().to_bits()
    );
}

#[test]
fn imputer_checkpoint_round_trip_preserves_outputs() {
    let spec = SyntheticSpec::oracle_default(4.0);
    let (weeks, diaries) = make_synthetic_corpus(&spec, 40, 7).unwrap();
    let split = build_split(&diaries.person_ids(), 5).unwrap();
    let mut config = ModelConfig::new(1, 16, 0.01, 8);
    config.heads = 2;
    config.max_epochs = 2;
    let (model, _) = train_imputer(&diaries, &split, 0, &config, 13).unwrap();

    let week = &weeks.weeks[0];
    let before = model.impute(week, &weeks.alphabet, 33, 1.0).unwrap();

    let dir = tempdir().unwrap();
    let path = dir.path().join("imputer.ckpt");
    io::save_imputer(&model, &path).unwrap();
    let loaded = io::load_imputer(&path).unwrap();
    let after = loaded.impute(week, &weeks.alphabet, 33, 1.0).unwrap();
    assert_eq!(before, after);

    // imputed weeks live in the activity alphabet
    assert!(before
        .states
        .iter()
        .zip(&week.states)
        .all(|(&a, &m)| if m == 0 {
            (a as usize) < HOME_ACTIVITIES
        } else {
            a == StateAlphabet::away_code_to_activity(m)
        }));
}

#[test]
fn markov_checkpoint_round_trip_preserves_samples() {
    let spec = SyntheticSpec::oracle_default(6.0);
    let (weeks, _) = make_synthetic_corpus(&spec, 50, 9).unwrap();
    let model = fit_markov(&weeks, 0.5).unwrap();
    let before = sample_markov(&model, 5, 17).unwrap();

    let dir = tempdir().unwrap();
    let path = dir.path().join("markov.ckpt");
    io::save_markov(&model, &path).unwrap();
    let loaded = io::load_markov(&path).unwrap();
    assert_eq!(loaded.strata.len(), model.strata.len());
    let after = sample_markov(&loaded, 5, 17).unwrap();
    assert_eq!(before, after);
}

#[test]
fn corpus_files_feed_training() {
    let dir = tempdir().unwrap();
    let spec = SyntheticSpec::oracle_default(4.0);
    let (weeks, diaries) = make_synthetic_corpus(&spec, 30, 2).unwrap();
    let week_path = dir.path().join("weeks.corpus");
    let diary_path = dir.path().join("diaries.corpus");
    io::write_week_corpus(&weeks, &week_path).unwrap();
    io::write_diary_corpus(&diaries, &diary_path).unwrap();

    let weeks2 = io::read_week_corpus(&week_path).unwrap();
    let split = build_split(&weeks2.person_ids(), 1).unwrap();
    let (_, report) = train_generator(&weeks2, &split, 0, &tiny_gen_config(1), 5).unwrap();
    assert_eq!(report.epochs_run(), 1);

    let diaries2 = io::read_diary_corpus(&diary_path).unwrap();
    assert_eq!(diaries2.samples, diaries.samples);
}

#[test]
fn evaluation_rejects_empty_and_zero_n() {
    let spec = SyntheticSpec::oracle_default(4.0);
    let (weeks, _) = make_synthetic_corpus(&spec, 40, 3).unwrap();
    let split = build_split(&weeks.person_ids(), 5).unwrap();
    let (model, _) = train_generator(&weeks, &split, 0, &tiny_gen_config(1), 11).unwrap();
    assert!(matches!(
        evaluate_generator(&model, &weeks, 0, 1),
        Err(Error::InvalidArgument(_))
    ));
}

/// Conditioning must matter: with personas that differ strongly by age
/// class, schedules generated for the two classes must differ in aggregate
/// state probability by more than half the empirical between-class distance.
#[test]
fn generated_schedules_respect_conditioning() {
    let mut spec = SyntheticSpec::oracle_default(2.0);
    spec.cells.truncate(2);
    spec.cells[0].weight = 0.5;
    spec.cells[1].weight = 0.5;
    // pull the two personas far apart and silence within-cell variation
    spec.cells[0].workday.leave = 40;
    spec.cells[0].workday.ret = 80;
    spec.cells[1].workday.leave = 70;
    spec.cells[1].workday.ret = 120;
    for cell in &mut spec.cells {
        cell.person_jitter_steps = 2.0;
        cell.car_probability = 0.0;
    }
    let (weeks, _) = make_synthetic_corpus(&spec, 120, 21).unwrap();
    let split = build_split(&weeks.person_ids(), 2).unwrap();
    let mut config = ModelConfig::new(1, 32, 0.01, 4);
    config.max_epochs = 25;
    config.patience = 25;
    let (model, _) = train_generator(&weeks, &split, 0, &config, 4).unwrap();

    let sp_of = |weeks: &[WeeklySchedule]| {
        let refs: Vec<&[u16]> = weeks.iter().map(|w| w.states.as_slice()).collect();
        metrics::state_probability_curves(&refs, 6).unwrap()
    };
    let distance = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        let mut sq = 0.0;
        let mut n = 0usize;
        for (ca, cb) in a.iter().zip(b) {
            for (x, y) in ca.iter().zip(cb) {
                sq += (x - y) * (x - y);
                n += 1;
            }
        }
        (sq / n as f64).sqrt()
    };

    let class_a = spec.cells[0].age_class;
    let class_b = spec.cells[1].age_class;
    let occ_a = spec.cells[0].occupation_class;
    let occ_b = spec.cells[1].occupation_class;
    let emp_a: Vec<WeeklySchedule> = weeks
        .weeks
        .iter()
        .filter(|w| w.attributes.age_class == class_a)
        .cloned()
        .collect();
    let emp_b: Vec<WeeklySchedule> = weeks
        .weeks
        .iter()
        .filter(|w| w.attributes.age_class == class_b)
        .cloned()
        .collect();
    let empirical = distance(&sp_of(&emp_a), &sp_of(&emp_b));

    let gen_a = model
        .generate(&PersonAttributes::new("a", class_a, occ_a).unwrap(), 150, 5, 1.0)
        .unwrap();
    let gen_b = model
        .generate(&PersonAttributes::new("b", class_b, occ_b).unwrap(), 150, 6, 1.0)
        .unwrap();
    let generated = distance(&sp_of(&gen_a), &sp_of(&gen_b));

    assert!(
        generated > 0.5 * empirical,
        "between-class distance {generated:.4} vs empirical {empirical:.4}"
    );
}

#[test]
fn markov_large_sample_matches_marginals() {
    let spec = SyntheticSpec::oracle_default(6.0);
    let (weeks, _) = make_synthetic_corpus(&spec, 100, 31).unwrap();
    let model = fit_markov(&weeks, 0.0).unwrap();
    let sampled = sample_markov(&model, 20_000, 8).unwrap();

    let emp = metrics::state_probability_curves(&metrics::week_state_refs(&weeks), 6).unwrap();
    let refs: Vec<&[u16]> = sampled.iter().map(|w| w.states.as_slice()).collect();
    let got = metrics::state_probability_curves(&refs, 6).unwrap();
    let mut worst = 0.0f64;
    for s in 0..6 {
        for t in 0..WEEK_STEPS {
            worst = worst.max((emp[s][t] - got[s][t]).abs());
        }
    }
    assert!(worst < 2e-2, "worst marginal deviation {worst}");
}

#[test]
fn diary_corpus_day_lengths_are_uniform() {
    let spec = SyntheticSpec::oracle_default(5.0);
    let (_, diaries) = make_synthetic_corpus(&spec, 25, 4).unwrap();
    for sample in &diaries.samples {
        for day in &sample.days {
            assert_eq!(day.states.len(), DAY_STEPS);
        }
    }
    let _ = SplitPlan::FOLDS;
}
