//! Domain types: state alphabets, schedules, diaries, dataset containers and
//! deterministic train/validation/test splitting.
//!
//! Time convention: a week is 1008 steps of 10 minutes starting Monday 00:00;
//! a diary day is 144 steps starting at 04:00 on its recorded weekday.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::util::rng_stream;
use crate::{Error, Result};

/// Steps per week at 10-minute resolution.
pub const WEEK_STEPS: usize = 1008;
/// Steps per day at 10-minute resolution.
pub const DAY_STEPS: usize = 144;
/// Number of age classes.
pub const AGE_CLASSES: u8 = 7;
/// Number of occupation classes.
pub const OCCUPATION_CLASSES: u8 = 7;
/// Number of mobility states.
pub const MOBILITY_STATES: usize = 6;
/// Number of in-home activity states.
pub const HOME_ACTIVITIES: usize = 10;
/// Number of states in the activity alphabet (10 activities + 5 away states).
pub const ACTIVITY_STATES: usize = 15;
/// Code of the "at home" state in the mobility alphabet.
pub const AT_HOME: u16 = 0;

/// Which kind of state space an alphabet describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphabetKind {
    Mobility,
    Activity,
}

/// An ordered, dense set of categorical states. The code of a state is its
/// index into `labels`, so codes are 0..K-1 by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateAlphabet {
    pub name: String,
    pub kind: AlphabetKind,
    pub labels: Vec<String>,
}

impl StateAlphabet {
    pub fn new(name: impl Into<String>, kind: AlphabetKind, labels: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind,
            labels,
        }
    }

    /// Default six-state mobility alphabet. The label set is configuration,
    /// not contract; only "at home" (code 0) and "driving car" are fixed.
    pub fn default_mobility() -> Self {
        Self::new(
            "mobility",
            AlphabetKind::Mobility,
            [
                "at home",
                "driving car",
                "work/education",
                "shopping/errands",
                "leisure/other place",
                "on the way",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        )
    }

    /// Default fifteen-state activity alphabet: ten in-home activities
    /// (codes 0..9) followed by the five away states of the mobility
    /// alphabet (codes 10..14, in mobility order).
    pub fn default_activity() -> Self {
        Self::new(
            "activity",
            AlphabetKind::Activity,
            [
                "sleeping",
                "personal hygiene",
                "eating",
                "cooking",
                "dishwashing/cleaning",
                "laundry/ironing",
                "tv/media",
                "computer/ict",
                "hobbies",
                "other at home",
                "driving car",
                "work/education",
                "shopping/errands",
                "leisure/other place",
                "on the way",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        )
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, code: u16) -> Option<&str> {
        self.labels.get(code as usize).map(|s| s.as_str())
    }

    pub fn contains(&self, code: u16) -> bool {
        (code as usize) < self.labels.len()
    }

    /// In the activity alphabet, codes below [`HOME_ACTIVITIES`] are in-home
    /// activities and the rest are away states.
    pub fn is_home_activity(&self, code: u16) -> bool {
        debug_assert_eq!(self.kind, AlphabetKind::Activity);
        (code as usize) < HOME_ACTIVITIES
    }

    /// Structural checks for the two standard alphabet kinds.
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            AlphabetKind::Mobility => {
                if self.size() != MOBILITY_STATES {
                    return Err(Error::InvalidArgument(format!(
                        "mobility alphabet must have {MOBILITY_STATES} states, got {}",
                        self.size()
                    )));
                }
                for required in ["at home", "driving car"] {
                    if !self.labels.iter().any(|l| l == required) {
                        return Err(Error::InvalidArgument(format!(
                            "mobility alphabet is missing the '{required}' state"
                        )));
                    }
                }
            }
            AlphabetKind::Activity => {
                if self.size() != ACTIVITY_STATES {
                    return Err(Error::InvalidArgument(format!(
                        "activity alphabet must have {ACTIVITY_STATES} states, got {}",
                        self.size()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Map an away mobility code (1..5) to its slot in the activity alphabet.
    pub fn away_code_to_activity(mobility_code: u16) -> u16 {
        debug_assert!((1..MOBILITY_STATES as u16).contains(&mobility_code));
        HOME_ACTIVITIES as u16 + mobility_code - 1
    }

    /// Inverse of [`Self::away_code_to_activity`].
    pub fn activity_code_to_away(activity_code: u16) -> u16 {
        debug_assert!((activity_code as usize) >= HOME_ACTIVITIES);
        activity_code - HOME_ACTIVITIES as u16 + 1
    }
}

/// Socio-demographic attributes of one person.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonAttributes {
    pub person_id: String,
    pub age_class: u8,
    pub occupation_class: u8,
}

impl PersonAttributes {
    pub fn new(person_id: impl Into<String>, age_class: u8, occupation_class: u8) -> Result<Self> {
        if age_class >= AGE_CLASSES || occupation_class >= OCCUPATION_CLASSES {
            return Err(Error::InvalidArgument(format!(
                "age/occupation class must be below {AGE_CLASSES}, got ({age_class}, {occupation_class})"
            )));
        }
        Ok(Self {
            person_id: person_id.into(),
            age_class,
            occupation_class,
        })
    }
}

/// One week of states at 10-minute resolution, Monday 00:00 origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklySchedule {
    pub attributes: PersonAttributes,
    pub states: Vec<u16>,
}

/// A single diary day: 144 steps starting 04:00 on `weekday` (0 = Monday).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiaryDay {
    pub weekday: u8,
    pub states: Vec<u16>,
}

/// Up to three diary days recorded by one person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiarySample {
    pub attributes: PersonAttributes,
    pub days: Vec<DiaryDay>,
}

impl DiarySample {
    /// Days sorted by weekday; the canonical order for model input.
    pub fn ordered_days(&self) -> Vec<&DiaryDay> {
        let mut days: Vec<&DiaryDay> = self.days.iter().collect();
        days.sort_by_key(|d| d.weekday);
        days
    }

    pub fn validate(&self, alphabet: &StateAlphabet) -> Vec<Violation> {
        let mut violations = Vec::new();
        if self.days.is_empty() || self.days.len() > 3 {
            violations.push(Violation::DayCount { got: self.days.len() });
        }
        let mut seen = [false; 7];
        for day in &self.days {
            if day.weekday > 6 {
                violations.push(Violation::WeekdayRange { got: day.weekday });
                continue;
            }
            if seen[day.weekday as usize] {
                violations.push(Violation::DuplicateWeekday { weekday: day.weekday });
            }
            seen[day.weekday as usize] = true;
            if day.states.len() != DAY_STEPS {
                violations.push(Violation::Length {
                    expected: DAY_STEPS,
                    got: day.states.len(),
                });
            }
            for (step, &code) in day.states.iter().enumerate() {
                if !alphabet.contains(code) {
                    violations.push(Violation::CodeRange { step, code });
                }
            }
        }
        violations
    }
}

/// A week-schedule dataset sharing one alphabet.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeekCorpus {
    pub alphabet: StateAlphabet,
    pub weeks: Vec<WeeklySchedule>,
}

impl WeekCorpus {
    pub fn person_ids(&self) -> Vec<String> {
        self.weeks
            .iter()
            .map(|w| w.attributes.person_id.clone())
            .collect()
    }
}

/// A diary dataset sharing one alphabet.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiaryCorpus {
    pub alphabet: StateAlphabet,
    pub samples: Vec<DiarySample>,
}

impl DiaryCorpus {
    pub fn person_ids(&self) -> Vec<String> {
        self.samples
            .iter()
            .map(|s| s.attributes.person_id.clone())
            .collect()
    }
}

/// A single invariant violation found by validation. Violations are data,
/// not errors: callers decide whether to reject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Length { expected: usize, got: usize },
    CodeRange { step: usize, code: u16 },
    DayCount { got: usize },
    WeekdayRange { got: u8 },
    DuplicateWeekday { weekday: u8 },
}

/// Check week length and code range of a schedule against an alphabet.
pub fn validate_schedule(schedule: &WeeklySchedule, alphabet: &StateAlphabet) -> Vec<Violation> {
    let mut violations = Vec::new();
    if schedule.states.len() != WEEK_STEPS {
        violations.push(Violation::Length {
            expected: WEEK_STEPS,
            got: schedule.states.len(),
        });
    }
    for (step, &code) in schedule.states.iter().enumerate() {
        if !alphabet.contains(code) {
            violations.push(Violation::CodeRange { step, code });
        }
    }
    violations
}

/// Weekday (0 = Monday .. 6 = Sunday) of a week step.
pub fn weekday_of(step: usize) -> Result<u8> {
    if step >= WEEK_STEPS {
        return Err(Error::StepOutOfRange(step));
    }
    Ok((step / DAY_STEPS) as u8)
}

/// Person-level split: 10% test, remainder in nine folds for cross
/// validation. No person ever appears in two partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub test_ids: Vec<String>,
    pub folds: Vec<Vec<String>>,
}

impl SplitPlan {
    pub const FOLDS: usize = 9;

    /// Fold index per person id.
    pub fn fold_assignments(&self) -> BTreeMap<&str, u8> {
        let mut map = BTreeMap::new();
        for (k, fold) in self.folds.iter().enumerate() {
            for id in fold {
                map.insert(id.as_str(), k as u8);
            }
        }
        map
    }

    /// Validation ids of fold `k`.
    pub fn validation_ids(&self, fold: usize) -> &[String] {
        &self.folds[fold]
    }

    /// Training ids of fold `k`: every fold except `k`.
    pub fn training_ids(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().map(|s| s.as_str()))
            .collect()
    }
}

/// Deterministically partition person ids into a 10% test set and nine
/// cross-validation folds. Ids are sorted before shuffling so the plan
/// depends only on the id set and the seed, not on input order.
pub fn build_split(person_ids: &[String], seed: u64) -> Result<SplitPlan> {
    const MIN_PERSONS: usize = 20;
    let mut ids: Vec<String> = person_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != person_ids.len() {
        return Err(Error::InvalidArgument(
            "duplicate person ids in split input".into(),
        ));
    }
    if ids.len() < MIN_PERSONS {
        return Err(Error::TooFewPersons {
            min: MIN_PERSONS,
            got: ids.len(),
        });
    }

    let mut rng = rng_stream(seed, &[u64::from_le_bytes(*b"split\0\0\0")]);
    ids.shuffle(&mut rng);

    let n = ids.len();
    let test_size = (n as f64 * 0.1).round() as usize;
    let test_ids: Vec<String> = ids[..test_size].to_vec();
    let rest = &ids[test_size..];

    let m = rest.len();
    let base = m / SplitPlan::FOLDS;
    let extra = m % SplitPlan::FOLDS;
    let mut folds = Vec::with_capacity(SplitPlan::FOLDS);
    let mut offset = 0;
    for k in 0..SplitPlan::FOLDS {
        let size = base + usize::from(k < extra);
        folds.push(rest[offset..offset + size].to_vec());
        offset += size;
    }
    debug_assert_eq!(offset, m);

    Ok(SplitPlan {
        seed,
        test_ids,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:04}")).collect()
    }

    #[test]
    fn split_100_ids_gives_10_test_and_9_folds_of_10() {
        let plan = build_split(&ids(100), 1).unwrap();
        assert_eq!(plan.test_ids.len(), 10);
        assert_eq!(plan.folds.len(), 9);
        for fold in &plan.folds {
            assert_eq!(fold.len(), 10);
        }
    }

    #[test]
    fn split_is_deterministic() {
        let a = build_split(&ids(100), 1).unwrap();
        let b = build_split(&ids(100), 1).unwrap();
        assert_eq!(a, b);
        let c = build_split(&ids(100), 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_95_ids_partitions_exactly() {
        let input = ids(95);
        let plan = build_split(&input, 7).unwrap();
        assert!(plan.test_ids.len() == 9 || plan.test_ids.len() == 10);

        let rest = 95 - plan.test_ids.len();
        let lo = rest / 9;
        for fold in &plan.folds {
            assert!(fold.len() == lo || fold.len() == lo + 1, "fold size {}", fold.len());
        }

        // Union is everything, pieces pairwise disjoint.
        let mut seen = BTreeSet::new();
        for id in plan.test_ids.iter().chain(plan.folds.iter().flatten()) {
            assert!(seen.insert(id.clone()), "{id} assigned twice");
        }
        assert_eq!(seen.len(), 95);
        let all: BTreeSet<String> = input.into_iter().collect();
        assert_eq!(seen, all);
    }

    #[test]
    fn split_training_ids_exclude_validation_fold() {
        let plan = build_split(&ids(100), 3).unwrap();
        for k in 0..9 {
            let val: BTreeSet<&str> = plan.validation_ids(k).iter().map(|s| s.as_str()).collect();
            let train: BTreeSet<&str> = plan.training_ids(k).into_iter().collect();
            assert_eq!(train.len(), 80);
            assert!(train.is_disjoint(&val));
        }
    }

    #[test]
    fn split_rejects_small_and_duplicated_inputs() {
        assert!(matches!(
            build_split(&ids(19), 1),
            Err(Error::TooFewPersons { got: 19, .. })
        ));
        let mut dup = ids(30);
        dup.push("p0001".into());
        assert!(build_split(&dup, 1).is_err());
    }

    #[test]
    fn weekday_of_boundaries() {
        assert_eq!(weekday_of(0).unwrap(), 0);
        assert_eq!(weekday_of(143).unwrap(), 0);
        assert_eq!(weekday_of(144).unwrap(), 1);
        assert_eq!(weekday_of(1007).unwrap(), 6);
        assert!(weekday_of(1008).is_err());
    }

    #[test]
    fn weekday_of_is_monotone_and_surjective() {
        let mut prev = 0;
        let mut seen = [false; 7];
        for step in 0..WEEK_STEPS {
            let wd = weekday_of(step).unwrap();
            assert!(wd >= prev);
            prev = wd;
            seen[wd as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn validate_schedule_reports_violations() {
        let alphabet = StateAlphabet::default_mobility();
        let attrs = PersonAttributes::new("p1", 3, 2).unwrap();
        let ok = WeeklySchedule {
            attributes: attrs.clone(),
            states: vec![0; WEEK_STEPS],
        };
        assert!(validate_schedule(&ok, &alphabet).is_empty());

        let short = WeeklySchedule {
            attributes: attrs.clone(),
            states: vec![0; WEEK_STEPS - 1],
        };
        assert_eq!(
            validate_schedule(&short, &alphabet),
            vec![Violation::Length {
                expected: WEEK_STEPS,
                got: WEEK_STEPS - 1
            }]
        );

        let mut bad = ok.clone();
        bad.states[5] = 6;
        assert_eq!(
            validate_schedule(&bad, &alphabet),
            vec![Violation::CodeRange { step: 5, code: 6 }]
        );
    }

    #[test]
    fn attributes_reject_out_of_range_classes() {
        assert!(PersonAttributes::new("p", 7, 0).is_err());
        assert!(PersonAttributes::new("p", 0, 7).is_err());
        assert!(PersonAttributes::new("p", 6, 6).is_ok());
    }

    #[test]
    fn default_alphabets_validate() {
        StateAlphabet::default_mobility().validate().unwrap();
        StateAlphabet::default_activity().validate().unwrap();
        assert_eq!(StateAlphabet::default_mobility().size(), 6);
        assert_eq!(StateAlphabet::default_activity().size(), 15);
    }

    #[test]
    fn away_code_mapping_round_trips() {
        for m in 1..MOBILITY_STATES as u16 {
            let a = StateAlphabet::away_code_to_activity(m);
            assert!(a >= HOME_ACTIVITIES as u16 && (a as usize) < ACTIVITY_STATES);
            assert_eq!(StateAlphabet::activity_code_to_away(a), m);
        }
        // Away labels agree between the two default alphabets.
        let mob = StateAlphabet::default_mobility();
        let act = StateAlphabet::default_activity();
        for m in 1..MOBILITY_STATES as u16 {
            assert_eq!(
                mob.label(m),
                act.label(StateAlphabet::away_code_to_activity(m))
            );
        }
    }
}
