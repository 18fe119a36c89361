//! Classification Accuracy Score and the real-data reference.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{config_err, Result};
use crate::models::{fit_classifier, ClassifierKind, ProbabilisticClassifier, TrainingBudget};
use crate::scalar::{argmax, Real};
use crate::seed::{derive_seed, hex, Fingerprint};
use crate::synthesis::{train_with_recycle, DatasetSource, RecycleSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CasConfig {
    pub kind: ClassifierKind,
    pub budget: TrainingBudget,
    /// One classifier is trained per seed; the repeat count is its length.
    pub seeds: Vec<u64>,
}

impl CasConfig {
    pub fn new(kind: ClassifierKind, budget: TrainingBudget, seeds: Vec<u64>) -> Result<Self> {
        let c = Self { kind, budget, seeds };
        c.validate()?;
        Ok(c)
    }

    pub fn repeats(&self) -> usize {
        self.seeds.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        self.budget.validate()?;
        if self.seeds.is_empty() {
            return Err(config_err("CAS needs at least one seed"));
        }
        Ok(())
    }

    fn hash_into(&self, fp: &mut Fingerprint) {
        match self.kind {
            ClassifierKind::Softmax => fp.str("softmax"),
            ClassifierKind::Mlp { hidden } => fp.str("mlp").u64(hidden as u64),
        };
        let b = &self.budget;
        fp.u64(b.epochs as u64)
            .u64(b.batch_size as u64)
            .f64(b.learning_rate)
            .f64(b.decay_factor)
            .f64(b.weight_decay)
            .f64(b.momentum)
            .u64(b.decay_epochs.len() as u64);
        for &e in &b.decay_epochs {
            fp.u64(e as u64);
        }
        fp.u64(self.seeds.len() as u64);
        for &s in &self.seeds {
            fp.u64(s);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasResult {
    pub cas_mean: f64,
    pub cas_per_seed: Vec<f64>,
    /// Hex digest of everything that determines the scores.
    pub fingerprint: String,
    pub seeds: Vec<u64>,
    pub wall_time_secs: f64,
}

impl CasResult {
    /// Wraps already-measured scores; used when transcribing external results.
    pub fn from_scores(cas_per_seed: Vec<f64>) -> Self {
        let cas_mean = mean(&cas_per_seed);
        Self {
            cas_mean,
            cas_per_seed,
            fingerprint: String::new(),
            seeds: Vec::new(),
            wall_time_secs: 0.0,
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Fraction of `test` whose top-1 prediction matches the label.
pub fn accuracy<T: Real>(model: &dyn ProbabilisticClassifier<T>, test: &Dataset<T>) -> f64 {
    if test.is_empty() {
        return f64::NAN;
    }
    let all: Vec<usize> = (0..test.len()).collect();
    let proba = model.predict_proba_batch(&test.feature_matrix(&all));
    let hits = test
        .iter()
        .enumerate()
        .filter(|(i, s)| argmax(proba.row(*i)) == s.label)
        .count();
    hits as f64 / test.len() as f64
}

fn check_test<T: Real>(test: &Dataset<T>, num_classes: usize, feature_dim: usize) -> Result<()> {
    if test.is_empty() {
        return Err(config_err("real test set is empty"));
    }
    if test.num_classes() > num_classes || test.feature_dim() != feature_dim {
        return Err(config_err("real test set does not match the generator's classes or width"));
    }
    Ok(())
}

/// Configuration digest of a synthetic CAS run.
pub fn cas_fingerprint<T: Real>(source: &DatasetSource<'_, T>, schedule: RecycleSchedule, config: &CasConfig) -> u64 {
    let mut fp = Fingerprint::new("cas");
    fp.u64(source.ensemble.len() as u64).u64(source.ensemble.assignment_seed);
    for m in source.ensemble.members() {
        fp.u64(m.generator.id()).f64(m.noise.stddev);
        match m.filter.threshold {
            Some(t) => fp.str("t").f64(t),
            None => fp.str("off"),
        };
    }
    match schedule {
        RecycleSchedule::Static => fp.str("static"),
        RecycleSchedule::Every(n) => fp.str("every").u64(n as u64),
    };
    fp.u64(source.base_seed).u64(source.quota.max_attempt_factor as u64);
    for &q in &source.quota.per_class {
        fp.u64(q as u64);
    }
    config.hash_into(&mut fp);
    fp.finish()
}

/// Trains one classifier per seed on the synthetic source and scores each on
/// `real_test`. Seed `r` also reseeds the source so repeats see independent
/// synthetic data. Seeds run concurrently on the current rayon pool.
pub fn compute_cas<T: Real>(
    source: &DatasetSource<'_, T>,
    schedule: RecycleSchedule,
    real_test: &Dataset<T>,
    config: &CasConfig,
) -> Result<CasResult> {
    config.validate()?;
    check_test(real_test, source.ensemble.num_classes(), source.ensemble.feature_dim())?;
    let start = Instant::now();
    let scores = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = source.with_base_seed(derive_seed(source.base_seed, "cas", &[seed]));
            let model = train_with_recycle(config.kind, &config.budget, &run, schedule, seed)?;
            Ok(accuracy(&model, real_test))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CasResult {
        cas_mean: mean(&scores),
        cas_per_seed: scores,
        fingerprint: hex(cas_fingerprint(source, schedule, config)),
        seeds: config.seeds.clone(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// The same protocol trained on the real training set.
pub fn real_accuracy<T: Real>(real_train: &Dataset<T>, real_test: &Dataset<T>, config: &CasConfig) -> Result<CasResult> {
    config.validate()?;
    check_test(real_test, real_train.num_classes(), real_train.feature_dim())?;
    let start = Instant::now();
    let scores = config
        .seeds
        .par_iter()
        .map(|&seed| Ok(accuracy(&fit_classifier(config.kind, real_train, &config.budget, seed)?, real_test)))
        .collect::<Result<Vec<f64>>>()?;
    let mut fp = Fingerprint::new("real-accuracy");
    fp.u64(real_train.fingerprint());
    config.hash_into(&mut fp);
    Ok(CasResult {
        cas_mean: mean(&scores),
        cas_per_seed: scores,
        fingerprint: hex(fp.finish()),
        seeds: config.seeds.clone(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
