//! Synthetic training sets: latent expansion, filtering, periodic recycling
//! and ensemble sampling behind one `DatasetSource`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{config_err, Error, Result};
use crate::filtering::{generate_from_members, FilterPolicy, GenerationQuota, Grid, SamplingMember};
use crate::models::{Classifier, ClassifierKind, ClassifierTrainer, ConditionalGenerator, ProbabilisticClassifier, TrainingBudget};
use crate::scalar::Real;
use crate::seed::derive_seed;

/// Latent stddev in force plus the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisePolicy {
    pub stddev: f64,
    #[serde(default = "NoisePolicy::default_grid")]
    pub grid: Grid,
}

impl NoisePolicy {
    pub const fn default_grid() -> Grid {
        Grid::new(1.0, 2.0, 0.05)
    }

    pub fn at(stddev: f64) -> Self {
        Self {
            stddev,
            grid: Self::default_grid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.grid.start < 0.0 {
            return Err(config_err("noise grid must start at a non-negative stddev"));
        }
        if !(self.stddev >= 0.0 && self.stddev.is_finite()) {
            return Err(config_err("noise stddev must be finite and non-negative"));
        }
        Ok(())
    }
}

impl Default for NoisePolicy {
    fn default() -> Self {
        Self::at(1.0)
    }
}

/// Stddevs `s0, s0 + step, …, sf`.
pub fn stddev_grid(noise: &NoisePolicy) -> Result<Vec<f64>> {
    noise.validate()?;
    Ok(noise.grid.points())
}

/// How often the synthetic training set is replaced.
///
/// Serialized as the string `"static"` or the integer period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub enum RecycleSchedule {
    Static,
    Every(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ScheduleRepr {
    Period(usize),
    Name(String),
}

impl TryFrom<ScheduleRepr> for RecycleSchedule {
    type Error = String;

    fn try_from(r: ScheduleRepr) -> Result<Self, String> {
        match r {
            ScheduleRepr::Period(0) => Err("recycle period must be at least 1".into()),
            ScheduleRepr::Period(n) => Ok(Self::Every(n)),
            ScheduleRepr::Name(s) if s == "static" => Ok(Self::Static),
            ScheduleRepr::Name(s) => Err(format!("unknown recycle schedule {s:?}")),
        }
    }
}

impl From<RecycleSchedule> for ScheduleRepr {
    fn from(s: RecycleSchedule) -> Self {
        match s {
            RecycleSchedule::Static => Self::Name("static".into()),
            RecycleSchedule::Every(n) => Self::Period(n),
        }
    }
}

impl RecycleSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Every(0) => Err(config_err("recycle period must be at least 1")),
            _ => Ok(()),
        }
    }

    /// Position on a "recycle frequency" axis: `1/N`, or 0 when static.
    pub fn frequency(&self) -> f64 {
        match *self {
            Self::Static => 0.0,
            Self::Every(n) => 1.0 / n as f64,
        }
    }
}

impl fmt::Display for RecycleSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Static => f.write_str("static"),
            Self::Every(n) => write!(f, "{n}"),
        }
    }
}

/// Whether epoch `epoch` starts on a freshly generated dataset.
pub fn should_recycle(epoch: usize, schedule: RecycleSchedule) -> bool {
    match schedule {
        RecycleSchedule::Static => epoch == 0,
        RecycleSchedule::Every(n) => epoch == 0 || (n > 0 && epoch.is_multiple_of(n)),
    }
}

/// One ensemble member with its own sampling hyperparameters.
#[derive(Clone, Copy)]
pub struct EnsembleMember<'a, T> {
    pub generator: &'a dyn ConditionalGenerator<T>,
    pub noise: NoisePolicy,
    pub filter: FilterPolicy,
}

impl<T> fmt::Debug for EnsembleMember<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnsembleMember")
            .field("stddev", &self.noise.stddev)
            .field("threshold", &self.filter.threshold)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleSpec<'a, T> {
    members: Vec<EnsembleMember<'a, T>>,
    pub assignment_seed: u64,
}

impl<'a, T: Real> EnsembleSpec<'a, T> {
    pub fn new(members: Vec<EnsembleMember<'a, T>>, assignment_seed: u64) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| config_err("an ensemble needs at least one generator"))?;
        let (c, d) = (first.generator.num_classes(), first.generator.feature_dim());
        for m in &members {
            if m.generator.num_classes() != c || m.generator.feature_dim() != d {
                return Err(config_err("ensemble members disagree on classes or feature width"));
            }
            m.noise.validate()?;
            m.filter.validate()?;
        }
        Ok(Self {
            members,
            assignment_seed,
        })
    }

    pub fn single(generator: &'a dyn ConditionalGenerator<T>, noise: NoisePolicy, filter: FilterPolicy) -> Result<Self> {
        Self::new(vec![EnsembleMember { generator, noise, filter }], 0)
    }

    pub fn members(&self) -> &[EnsembleMember<'a, T>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.members[0].generator.num_classes()
    }

    pub fn feature_dim(&self) -> usize {
        self.members[0].generator.feature_dim()
    }
}

/// Everything needed to materialize the synthetic training set of any epoch.
#[derive(Clone)]
pub struct DatasetSource<'a, T> {
    pub ensemble: EnsembleSpec<'a, T>,
    pub oracle: &'a dyn ProbabilisticClassifier<T>,
    pub quota: GenerationQuota,
    pub base_seed: u64,
}

impl<'a, T: Real> DatasetSource<'a, T> {
    pub fn new(
        ensemble: EnsembleSpec<'a, T>,
        oracle: &'a dyn ProbabilisticClassifier<T>,
        quota: GenerationQuota,
        base_seed: u64,
    ) -> Result<Self> {
        quota.validate()?;
        if quota.per_class.len() != ensemble.num_classes() || oracle.num_classes() != ensemble.num_classes() {
            return Err(config_err("quota, oracle and generators disagree on the number of classes"));
        }
        Ok(Self {
            ensemble,
            oracle,
            quota,
            base_seed,
        })
    }

    /// The same source drawing from a different seed stream.
    pub fn with_base_seed(&self, base_seed: u64) -> Self {
        Self {
            base_seed,
            ..self.clone()
        }
    }
}

/// Seed of the dataset realized at `epoch`.
pub fn realize_seed(base_seed: u64, epoch: usize) -> u64 {
    derive_seed(base_seed, "realize", &[epoch as u64])
}

/// The synthetic dataset for `epoch`.
pub fn realize<T: Real>(source: &DatasetSource<'_, T>, epoch: usize) -> Result<Dataset<T>> {
    realize_inner(source, epoch, None)
}

/// `realize`, also returning the ensemble member behind every sample.
pub fn realize_traced<T: Real>(source: &DatasetSource<'_, T>, epoch: usize) -> Result<(Dataset<T>, Vec<usize>)> {
    let mut provenance = Vec::new();
    let data = realize_inner(source, epoch, Some(&mut provenance))?;
    Ok((data, provenance))
}

fn realize_inner<T: Real>(
    source: &DatasetSource<'_, T>,
    epoch: usize,
    provenance: Option<&mut Vec<usize>>,
) -> Result<Dataset<T>> {
    let members: Vec<SamplingMember<'_, T>> = source
        .ensemble
        .members()
        .iter()
        .map(|m| SamplingMember {
            generator: m.generator,
            stddev: T::lit(m.noise.stddev),
            threshold: m.filter.threshold.map(T::lit),
        })
        .collect();
    generate_from_members(
        &members,
        source.oracle,
        &source.quota,
        realize_seed(source.base_seed, epoch),
        source.ensemble.assignment_seed,
        provenance,
    )
}

/// One regeneration event during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Regeneration {
    pub epoch: usize,
    pub fingerprint: u64,
}

/// Trains a classifier on the source, replacing the whole training set at
/// every epoch selected by `schedule`, before that epoch's first step.
pub fn train_with_recycle<T: Real>(
    kind: ClassifierKind,
    budget: &TrainingBudget,
    source: &DatasetSource<'_, T>,
    schedule: RecycleSchedule,
    seed: u64,
) -> Result<Classifier<T>> {
    train_with_recycle_traced(kind, budget, source, schedule, seed).map(|(c, _)| c)
}

/// `train_with_recycle`, also logging the fingerprint of every realized set.
pub fn train_with_recycle_traced<T: Real>(
    kind: ClassifierKind,
    budget: &TrainingBudget,
    source: &DatasetSource<'_, T>,
    schedule: RecycleSchedule,
    seed: u64,
) -> Result<(Classifier<T>, Vec<Regeneration>)> {
    schedule.validate()?;
    let mut trainer = ClassifierTrainer::new(
        kind,
        source.ensemble.num_classes(),
        source.ensemble.feature_dim(),
        budget,
        seed,
    )?;
    let mut log = Vec::new();
    let mut current: Option<Dataset<T>> = None;
    for epoch in 0..budget.epochs {
        if should_recycle(epoch, schedule) {
            let data = realize(source, epoch).map_err(|e| e.context(format!("epoch {epoch}")))?;
            log.push(Regeneration {
                epoch,
                fingerprint: data.fingerprint(),
            });
            current = Some(data);
        }
        let data = current.as_ref().ok_or_else(|| Error::Usage("no dataset realized".into()))?;
        trainer.train_epoch(data)?;
    }
    Ok((trainer.into_classifier(), log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_blobs, LabeledSample};
    use crate::filtering::generate_filtered;
    use crate::models::{fit_gmm_generator, ReplayGenerator};

    struct Sure;

    impl ProbabilisticClassifier<f64> for Sure {
        fn num_classes(&self) -> usize {
            2
        }
        fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
            if x[0] < 0.0 {
                vec![1.0, 0.0]
            } else {
                vec![0.0, 1.0]
            }
        }
    }

    fn blobs() -> Dataset<f64> {
        make_blobs(2, 60, &[vec![-3.0, 0.0], vec![3.0, 0.0]], &[0.5, 0.5], 1).unwrap()
    }

    fn budget(epochs: usize) -> TrainingBudget {
        TrainingBudget {
            epochs,
            batch_size: 32,
            learning_rate: 0.05,
            decay_epochs: vec![],
            decay_factor: 0.1,
            weight_decay: 0.0,
            momentum: 0.9,
        }
    }

    #[test]
    fn recycle_schedule_arithmetic() {
        let hits: Vec<usize> = (0..100).filter(|&e| should_recycle(e, RecycleSchedule::Every(10))).collect();
        assert_eq!(hits, (0..10).map(|i| i * 10).collect::<Vec<_>>());
        assert!((0..7).all(|e| should_recycle(e, RecycleSchedule::Every(1))));
        assert_eq!((0..50).filter(|&e| should_recycle(e, RecycleSchedule::Static)).count(), 1);
        for (epochs, n) in [(10, 3), (9, 3), (1, 4), (40, 10), (7, 7)] {
            let count = (0..epochs).filter(|&e| should_recycle(e, RecycleSchedule::Every(n))).count();
            assert_eq!(count, epochs.div_ceil(n));
        }
    }

    #[test]
    fn schedule_serde() {
        let s: RecycleSchedule = serde_json::from_str("\"static\"").unwrap();
        assert_eq!(s, RecycleSchedule::Static);
        let s: RecycleSchedule = serde_json::from_str("5").unwrap();
        assert_eq!(s, RecycleSchedule::Every(5));
        assert!(serde_json::from_str::<RecycleSchedule>("0").is_err());
        assert!(serde_json::from_str::<RecycleSchedule>("\"weekly\"").is_err());
        assert_eq!(serde_json::to_string(&RecycleSchedule::Every(10)).unwrap(), "10");
    }

    #[test]
    fn stddev_grid_points() {
        let g = stddev_grid(&NoisePolicy::default()).unwrap();
        assert_eq!(g.len(), 21);
        for w in g.windows(2) {
            assert!((w[1] - w[0] - 0.05).abs() < 1e-12);
        }
        assert!((g[20] - 2.0).abs() < 1e-12);
        let single = NoisePolicy {
            stddev: 1.0,
            grid: Grid::new(1.0, 1.0, 0.05),
        };
        assert_eq!(stddev_grid(&single).unwrap(), vec![1.0]);
    }

    #[test]
    fn single_member_realize_matches_generate_filtered() {
        let train = blobs();
        let ckpt = fit_gmm_generator(&train, 1, 5, 3).unwrap().pop().unwrap();
        let quota = GenerationQuota::matching(&train);
        let filter = FilterPolicy::at(0.5);
        let ens = EnsembleSpec::single(&ckpt, NoisePolicy::at(1.3), filter).unwrap();
        let source = DatasetSource::new(ens, &Sure, quota.clone(), 77).unwrap();
        let direct = generate_filtered(&ckpt, &Sure, &filter, &quota, 1.3, realize_seed(77, 4)).unwrap();
        assert_eq!(realize(&source, 4).unwrap(), direct);
        assert_eq!(realize(&source, 4).unwrap(), realize(&source, 4).unwrap());
        assert_ne!(realize(&source, 4).unwrap(), realize(&source, 5).unwrap());
    }

    #[test]
    fn recycling_changes_the_training_set() {
        let train = blobs();
        let ckpt = fit_gmm_generator(&train, 1, 5, 3).unwrap().pop().unwrap();
        let ens = EnsembleSpec::single(&ckpt, NoisePolicy::default(), FilterPolicy::off()).unwrap();
        let source = DatasetSource::new(ens, &Sure, GenerationQuota::matching(&train), 5).unwrap();
        let kind = ClassifierKind::Softmax;
        let (_, log) = train_with_recycle_traced(kind, &budget(3), &source, RecycleSchedule::Every(1), 9).unwrap();
        assert_eq!(log.len(), 3);
        assert!(log[0].fingerprint != log[1].fingerprint && log[1].fingerprint != log[2].fingerprint);
        let (_, log) = train_with_recycle_traced(kind, &budget(6), &source, RecycleSchedule::Every(6), 9).unwrap();
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn static_schedule_reduces_to_fit_classifier() {
        let train = blobs();
        let replay = ReplayGenerator::new(&train);
        let ens = EnsembleSpec::single(&replay, NoisePolicy::default(), FilterPolicy::off()).unwrap();
        let source = DatasetSource::new(ens, &Sure, GenerationQuota::matching(&train), 5).unwrap();
        let b = budget(4);
        let kind = ClassifierKind::Mlp { hidden: 4 };
        let recycled = train_with_recycle(kind, &b, &source, RecycleSchedule::Static, 2).unwrap();
        let direct = crate::models::fit_classifier(kind, &realize(&source, 0).unwrap(), &b, 2).unwrap();
        assert_eq!(recycled.params(), direct.params());
    }

    #[test]
    fn ensemble_rejects_mismatched_members() {
        let a = ReplayGenerator::new(&blobs());
        let other = Dataset::new(3, 2, vec![LabeledSample::new(vec![0.0, 0.0], 2)]).unwrap();
        let b = ReplayGenerator::new(&other);
        let m = |g| EnsembleMember {
            generator: g,
            noise: NoisePolicy::default(),
            filter: FilterPolicy::off(),
        };
        assert!(EnsembleSpec::<f64>::new(vec![m(&a), m(&b)], 0).is_err());
        assert!(EnsembleSpec::<f64>::new(vec![], 0).is_err());
    }
}
