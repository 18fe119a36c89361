//! GaFi orchestration: checkpoint selection, stddev sweep, threshold sweep,
//! the accurate run and multi-generator ensembles, plus the single-technique
//! ablations.

use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{config_err, Error, Result};
use crate::evaluation::{compute_cas, real_accuracy, CasConfig, CasResult};
use crate::filtering::{threshold_grid, FilterPolicy, GenerationQuota, DEFAULT_MAX_ATTEMPT_FACTOR};
use crate::models::{
    fit_classifier, fit_gmm_generator, fit_tiny_gan_with, ClassifierKind, ConditionalGenerator, GanConfig,
    GeneratorCheckpoint, GmmConfig, ProbabilisticClassifier, TrainingBudget,
};
use crate::scalar::Real;
use crate::seed::{derive_seed, hex};
use crate::synthesis::{stddev_grid, DatasetSource, EnsembleMember, EnsembleSpec, NoisePolicy, RecycleSchedule};

/// Cheap scoring configuration used for every sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FastPipelineConfig {
    /// Every `checkpoint_stride`-th checkpoint is scored, plus the last.
    pub checkpoint_stride: usize,
    /// Fraction of the full classifier budget's epochs.
    pub budget_scale: f64,
    pub repeats: usize,
}

impl FastPipelineConfig {
    pub const STDDEV: f64 = 1.0;
    pub const THRESHOLD: f64 = 0.0;
    pub const RECYCLE: RecycleSchedule = RecycleSchedule::Every(10);

    pub fn validate(&self) -> Result<()> {
        if self.checkpoint_stride == 0 || self.repeats == 0 {
            return Err(config_err("fast pipeline: checkpoint_stride and repeats must be positive"));
        }
        if !(self.budget_scale > 0.0 && self.budget_scale <= 1.0) {
            return Err(config_err("fast pipeline: budget_scale must lie in (0, 1]"));
        }
        Ok(())
    }
}

impl Default for FastPipelineConfig {
    fn default() -> Self {
        Self {
            checkpoint_stride: 5,
            budget_scale: 0.4,
            repeats: 1,
        }
    }
}

/// Hyperparameters chosen by the sweeps, trained with `N = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuratePipelineConfig {
    pub checkpoint_epoch: usize,
    pub stddev: f64,
    pub threshold: Option<f64>,
}

impl AccuratePipelineConfig {
    pub const RECYCLE: RecycleSchedule = RecycleSchedule::Every(1);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum PointOutcome {
    Scored(CasResult),
    /// Excluded from selection, e.g. a threshold the generator cannot meet.
    Failed { diagnostic: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    pub value: f64,
    pub outcome: PointOutcome,
}

impl SweepPoint {
    pub fn cas(&self) -> Option<&CasResult> {
        match &self.outcome {
            PointOutcome::Scored(r) => Some(r),
            PointOutcome::Failed { .. } => None,
        }
    }
}

/// Scores along one hyperparameter axis, ordered by strictly increasing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub axis: String,
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    pub fn new(axis: impl Into<String>, points: Vec<SweepPoint>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[0].value < w[1].value)) {
            return Err(config_err("sweep values must be strictly increasing"));
        }
        Ok(Self {
            axis: axis.into(),
            points,
        })
    }

    /// Curve of bare scores, one per value.
    pub fn from_scores(axis: impl Into<String>, scores: &[(&str, f64, f64)]) -> Result<Self> {
        let points = scores
            .iter()
            .map(|&(label, value, cas)| SweepPoint {
                label: label.to_string(),
                value,
                outcome: PointOutcome::Scored(CasResult::from_scores(vec![cas])),
            })
            .collect();
        Self::new(axis, points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// The scored point with the highest mean CAS; ties go to the smallest value.
pub fn select_best(curve: &SweepCurve) -> Result<(&SweepPoint, &CasResult)> {
    let mut best: Option<(&SweepPoint, &CasResult)> = None;
    for p in &curve.points {
        let Some(r) = p.cas() else { continue };
        best = match best {
            Some((bp, br))
                if br.cas_mean > r.cas_mean || (br.cas_mean == r.cas_mean && bp.value <= p.value) =>
            {
                Some((bp, br))
            }
            _ => Some((p, r)),
        };
    }
    best.ok_or_else(|| {
        Error::Pipeline(format!(
            "no point of the {} sweep produced a score; lower the grid",
            curve.axis
        ))
    })
}

/// Shared inputs of every CAS evaluation inside one repetition.
#[derive(Clone)]
pub struct EvalContext<'a, T> {
    pub oracle: &'a dyn ProbabilisticClassifier<T>,
    pub quota: GenerationQuota,
    pub test: &'a Dataset<T>,
    pub kind: ClassifierKind,
    /// Full budget; the fast pipeline scales it down.
    pub budget: TrainingBudget,
    pub fast: FastPipelineConfig,
    pub fast_seeds: Vec<u64>,
    pub accurate_seeds: Vec<u64>,
    pub noise: NoisePolicy,
    pub filter: FilterPolicy,
    /// Base of the synthetic streams shared by all points of a sweep.
    pub sweep_seed: u64,
    /// Base of the streams used by accurate runs, baselines and ablations.
    pub final_seed: u64,
}

impl<'a, T: Real> EvalContext<'a, T> {
    /// Context for `config` with quotas matching `train`.
    pub fn from_config(
        config: &GafiConfig,
        oracle: &'a dyn ProbabilisticClassifier<T>,
        train: &Dataset<T>,
        test: &'a Dataset<T>,
        sweep_seed: u64,
    ) -> Self {
        EvalContext {
            oracle,
            quota: GenerationQuota {
                per_class: train.class_counts(),
                max_attempt_factor: config.max_attempt_factor,
            },
            test,
            kind: config.classifier,
            budget: config.budget.clone(),
            fast: config.fast.clone(),
            fast_seeds: config.fast_seeds(),
            accurate_seeds: config.accurate_seeds(),
            noise: config.noise,
            filter: config.filter,
            sweep_seed,
            final_seed: config.final_seed(),
        }
    }

    pub fn fast_cas_config(&self) -> CasConfig {
        CasConfig {
            kind: self.kind,
            budget: self.budget.scaled(self.fast.budget_scale),
            seeds: self.fast_seeds.clone(),
        }
    }

    pub fn full_cas_config(&self) -> CasConfig {
        CasConfig {
            kind: self.kind,
            budget: self.budget.clone(),
            seeds: self.accurate_seeds.clone(),
        }
    }

    fn source<'g>(&'g self, ensemble: EnsembleSpec<'g, T>, base_seed: u64) -> Result<DatasetSource<'g, T>> {
        DatasetSource::new(ensemble, self.oracle, self.quota.clone(), base_seed)
    }

    /// Scores one generator setting; starvation becomes a failed point.
    fn point(
        &self,
        generator: &dyn ConditionalGenerator<T>,
        stddev: f64,
        threshold: Option<f64>,
        schedule: RecycleSchedule,
        config: &CasConfig,
        base_seed: u64,
    ) -> Result<PointOutcome> {
        let filter = FilterPolicy {
            threshold,
            ..self.filter
        };
        let ensemble = EnsembleSpec::single(generator, NoisePolicy { stddev, ..self.noise }, filter)?;
        match compute_cas(&self.source(ensemble, base_seed)?, schedule, self.test, config) {
            Ok(r) => Ok(PointOutcome::Scored(r)),
            Err(e) if e.is_starvation() => Ok(PointOutcome::Failed {
                diagnostic: e.to_string(),
            }),
            Err(e) => Err(e),
        }
    }

    fn fast_point(&self, generator: &dyn ConditionalGenerator<T>, stddev: f64, threshold: f64) -> Result<PointOutcome> {
        self.point(
            generator,
            stddev,
            Some(threshold),
            FastPipelineConfig::RECYCLE,
            &self.fast_cas_config(),
            self.sweep_seed,
        )
    }
}

fn label(v: f64) -> String {
    format!("{}", (v * 1e9).round() / 1e9)
}

/// Indices scored by the checkpoint sweep.
pub fn checkpoint_indices(count: usize, stride: usize) -> Vec<usize> {
    if count == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..count).step_by(stride.max(1)).collect();
    if idx.last() != Some(&(count - 1)) {
        idx.push(count - 1);
    }
    idx
}

/// Fast-pipeline CAS at every `stride`-th checkpoint plus the final one.
/// Returns the index of the best checkpoint and the curve over epochs.
pub fn optimize_checkpoint<T: Real>(
    checkpoints: &[GeneratorCheckpoint<T>],
    ctx: &EvalContext<'_, T>,
) -> Result<(usize, SweepCurve)> {
    if checkpoints.is_empty() {
        return Err(config_err("no checkpoints to optimize over"));
    }
    ctx.fast.validate()?;
    let indices = checkpoint_indices(checkpoints.len(), ctx.fast.checkpoint_stride);
    let points = indices
        .par_iter()
        .map(|&i| {
            let ckpt = &checkpoints[i];
            let outcome = ctx
                .fast_point(ckpt, FastPipelineConfig::STDDEV, FastPipelineConfig::THRESHOLD)
                .map_err(|e| e.context(format!("checkpoint epoch {}", ckpt.epoch)))?;
            Ok(SweepPoint {
                label: ckpt.epoch.to_string(),
                value: ckpt.epoch as f64,
                outcome,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let curve = SweepCurve::new("checkpoint", points)?;
    let best_epoch = select_best(&curve)?.0.value;
    let index = indices
        .into_iter()
        .find(|&i| checkpoints[i].epoch as f64 == best_epoch)
        .expect("selected epoch is on the curve");
    Ok((index, curve))
}

/// Fast-pipeline CAS over the stddev grid at `t = 0`.
pub fn optimize_stddev<T: Real>(
    generator: &dyn ConditionalGenerator<T>,
    ctx: &EvalContext<'_, T>,
) -> Result<(f64, SweepCurve)> {
    let grid = stddev_grid(&ctx.noise)?;
    let points = grid
        .par_iter()
        .map(|&s| {
            Ok(SweepPoint {
                label: label(s),
                value: s,
                outcome: ctx.fast_point(generator, s, FastPipelineConfig::THRESHOLD)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let curve = SweepCurve::new("stddev", points)?;
    let best = select_best(&curve)?.0.value;
    Ok((best, curve))
}

/// Fast-pipeline CAS over the threshold grid at the chosen stddev.
pub fn optimize_threshold<T: Real>(
    generator: &dyn ConditionalGenerator<T>,
    stddev: f64,
    ctx: &EvalContext<'_, T>,
) -> Result<(f64, SweepCurve)> {
    let grid = threshold_grid(&ctx.filter)?;
    let points = grid
        .par_iter()
        .map(|&t| {
            Ok(SweepPoint {
                label: label(t),
                value: t,
                outcome: ctx.fast_point(generator, stddev, t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let curve = SweepCurve::new("threshold", points)?;
    let best = select_best(&curve)?.0.value;
    Ok((best, curve))
}

/// Full-budget CAS with `N = 1` over an ensemble whose members carry their
/// own chosen hyperparameters.
pub fn run_accurate<T: Real>(ensemble: EnsembleSpec<'_, T>, ctx: &EvalContext<'_, T>) -> Result<CasResult> {
    compute_cas(
        &ctx.source(ensemble, ctx.final_seed)?,
        AccuratePipelineConfig::RECYCLE,
        ctx.test,
        &ctx.full_cas_config(),
    )
}

/// The untreated synthetic reference: `s = 1`, no filtering, static dataset.
pub fn run_baseline<T: Real>(generator: &dyn ConditionalGenerator<T>, ctx: &EvalContext<'_, T>) -> Result<CasResult> {
    let ensemble = EnsembleSpec::single(generator, NoisePolicy::at(1.0), FilterPolicy::off())?;
    compute_cas(
        &ctx.source(ensemble, ctx.final_seed)?,
        RecycleSchedule::Static,
        ctx.test,
        &ctx.full_cas_config(),
    )
}

/// How the conditional generators are trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorRecipe {
    Gmm(GmmConfig),
    TinyGan(GanConfig),
}

impl GeneratorRecipe {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Gmm(c) if c.components_per_class == 0 => Err(config_err("gmm: components_per_class must be positive")),
            Self::Gmm(_) => Ok(()),
            Self::TinyGan(c) => c.validate(),
        }
    }

    /// All checkpoints, index 0 being the initialization.
    pub fn fit<T: Real>(&self, train: &Dataset<T>, seed: u64) -> Result<Vec<GeneratorCheckpoint<T>>> {
        match self {
            Self::Gmm(c) => fit_gmm_generator(train, c.components_per_class, c.em_iterations, seed),
            Self::TinyGan(c) => fit_tiny_gan_with(train, c, seed).map(|(ckpts, _)| ckpts),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GafiConfig {
    pub recipe: GeneratorRecipe,
    pub classifier: ClassifierKind,
    /// Full classifier budget, used by the oracle and every accurate run.
    pub budget: TrainingBudget,
    #[serde(default)]
    pub fast: FastPipelineConfig,
    #[serde(default = "GafiConfig::default_accurate_repeats")]
    pub accurate_repeats: usize,
    #[serde(default)]
    pub noise: NoisePolicy,
    #[serde(default = "FilterPolicy::off")]
    pub filter: FilterPolicy,
    /// Ensemble sizes to evaluate; the largest sets the number of repetitions.
    pub k_list: Vec<usize>,
    #[serde(default = "GafiConfig::default_attempt_factor")]
    pub max_attempt_factor: usize,
    pub seed: u64,
}

impl GafiConfig {
    fn default_accurate_repeats() -> usize {
        3
    }

    fn default_attempt_factor() -> usize {
        DEFAULT_MAX_ATTEMPT_FACTOR
    }

    pub fn validate(&self) -> Result<()> {
        self.recipe.validate()?;
        self.classifier.validate()?;
        self.budget.validate()?;
        self.fast.validate()?;
        self.noise.validate()?;
        self.filter.validate()?;
        if self.accurate_repeats == 0 {
            return Err(config_err("accurate_repeats must be positive"));
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return Err(config_err("k_list must be non-empty and contain positive sizes"));
        }
        if self.max_attempt_factor == 0 {
            return Err(config_err("max_attempt_factor must be positive"));
        }
        Ok(())
    }

    pub fn repetitions(&self) -> usize {
        self.k_list.iter().copied().max().unwrap_or(0)
    }

    pub fn fast_seeds(&self) -> Vec<u64> {
        (0..self.fast.repeats as u64).map(|i| derive_seed(self.seed, "fast-seed", &[i])).collect()
    }

    pub fn accurate_seeds(&self) -> Vec<u64> {
        (0..self.accurate_repeats as u64).map(|i| derive_seed(self.seed, "accurate-seed", &[i])).collect()
    }

    pub fn oracle_seed(&self) -> u64 {
        derive_seed(self.seed, "oracle", &[])
    }

    pub fn generator_seed(&self, repetition: usize) -> u64 {
        derive_seed(self.seed, "generator", &[repetition as u64])
    }

    pub fn sweep_seed(&self, repetition: usize) -> u64 {
        derive_seed(self.seed, "sweep", &[repetition as u64])
    }

    pub fn final_seed(&self) -> u64 {
        derive_seed(self.seed, "final", &[])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub step: String,
    pub repetition: Option<usize>,
    /// Seconds since the start of the run.
    pub started_secs: f64,
    pub finished_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub index: usize,
    pub generator_seed: u64,
    pub checkpoint_count: usize,
    pub chosen_checkpoint_fingerprint: String,
    pub checkpoint_curve: SweepCurve,
    pub stddev_curve: SweepCurve,
    pub threshold_curve: SweepCurve,
    pub chosen: AccuratePipelineConfig,
    pub accurate: CasResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub k: usize,
    pub cas: CasResult,
}

/// Real-vs-synthetic gap before and after GaFi, as fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub real_accuracy: f64,
    pub baseline_cas: f64,
    pub gafi_cas: f64,
    pub gap_before: f64,
    pub gap_after: f64,
}

impl GapSummary {
    pub fn new(real_accuracy: f64, baseline_cas: f64, gafi_cas: f64) -> Self {
        Self {
            real_accuracy,
            baseline_cas,
            gafi_cas,
            gap_before: real_accuracy - baseline_cas,
            gap_after: real_accuracy - gafi_cas,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GafiReport {
    pub seed: u64,
    pub fast_budget: TrainingBudget,
    pub fast_seeds: Vec<u64>,
    pub accurate_seeds: Vec<u64>,
    pub oracle_seed: u64,
    pub oracle_train_accuracy: f64,
    /// Sweep points draw fresh candidates rather than re-filtering a pool.
    pub sweep_sampling: String,
    pub ensemble_assignment: String,
    pub repetitions: Vec<RepetitionRecord>,
    pub ensembles: Vec<EnsembleRecord>,
    pub baseline: CasResult,
    pub real: CasResult,
    /// Uses the ensemble of the largest requested size.
    pub gap: GapSummary,
    pub timings: Vec<StepTiming>,
}

impl GafiReport {
    /// Copy with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_wall_times(&self) -> Self {
        let mut r = self.clone();
        let zero_curve = |c: &mut SweepCurve| {
            for p in &mut c.points {
                if let PointOutcome::Scored(cas) = &mut p.outcome {
                    cas.wall_time_secs = 0.0;
                }
            }
        };
        for rep in &mut r.repetitions {
            zero_curve(&mut rep.checkpoint_curve);
            zero_curve(&mut rep.stddev_curve);
            zero_curve(&mut rep.threshold_curve);
            rep.accurate.wall_time_secs = 0.0;
        }
        for e in &mut r.ensembles {
            e.cas.wall_time_secs = 0.0;
        }
        r.baseline.wall_time_secs = 0.0;
        r.real.wall_time_secs = 0.0;
        for t in &mut r.timings {
            t.started_secs = 0.0;
            t.finished_secs = 0.0;
        }
        r
    }

    pub fn ensemble(&self, k: usize) -> Option<&CasResult> {
        self.ensembles.iter().find(|e| e.k == k).map(|e| &e.cas)
    }
}

struct Clock {
    start: Instant,
    log: Mutex<Vec<StepTiming>>,
}

impl Clock {
    fn time<R>(&self, step: &str, repetition: Option<usize>, f: impl FnOnce() -> Result<R>) -> Result<R> {
        let started = self.start.elapsed().as_secs_f64();
        let out = f().map_err(|e| e.context(step.to_string()))?;
        let finished = self.start.elapsed().as_secs_f64();
        self.log.lock().expect("timing log").push(StepTiming {
            step: step.to_string(),
            repetition,
            started_secs: started,
            finished_secs: finished,
        });
        Ok(out)
    }
}

struct Repetition<T> {
    checkpoint: GeneratorCheckpoint<T>,
    last: GeneratorCheckpoint<T>,
    record: RepetitionRecord,
}

/// Runs the whole pipeline. `jobs` bounds the worker pool; 0 uses one worker
/// per logical core. Results do not depend on `jobs`.
pub fn run_gafi<T: Real>(train: &Dataset<T>, test: &Dataset<T>, config: &GafiConfig, jobs: usize) -> Result<GafiReport> {
    config.validate()?;
    with_jobs(jobs, || run_gafi_inner(train, test, config))
}

/// Runs `f` on a dedicated pool of `jobs` workers (0: one per logical core).
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Pipeline(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

fn run_gafi_inner<T: Real>(train: &Dataset<T>, test: &Dataset<T>, config: &GafiConfig) -> Result<GafiReport> {
    let clock = Clock {
        start: Instant::now(),
        log: Mutex::new(Vec::new()),
    };
    let oracle = clock.time("oracle", None, || {
        fit_classifier(config.classifier, train, &config.budget, config.oracle_seed())
    })?;
    let ctx = |sweep_seed| EvalContext::from_config(config, &oracle, train, test, sweep_seed);

    let reps = (0..config.repetitions())
        .into_par_iter()
        .map(|r| {
            let ctx = ctx(config.sweep_seed(r));
            let rep = Some(r);
            let generator_seed = config.generator_seed(r);
            let mut checkpoints = clock.time("generator training", rep, || config.recipe.fit(train, generator_seed))?;
            let (best, checkpoint_curve) =
                clock.time("checkpoint optimization", rep, || optimize_checkpoint(&checkpoints, &ctx))?;
            let checkpoint = checkpoints[best].clone();
            let last = checkpoints.pop().expect("at least one checkpoint");
            drop(checkpoints);
            let (stddev, stddev_curve) = clock.time("stddev optimization", rep, || optimize_stddev(&checkpoint, &ctx))?;
            let (threshold, threshold_curve) = clock.time("threshold optimization", rep, || {
                optimize_threshold(&checkpoint, stddev, &ctx)
            })?;
            let chosen = AccuratePipelineConfig {
                checkpoint_epoch: checkpoint.epoch,
                stddev,
                threshold: Some(threshold),
            };
            let accurate = clock.time("accurate run", rep, || {
                let ens = EnsembleSpec::single(
                    &checkpoint,
                    NoisePolicy { stddev, ..config.noise },
                    FilterPolicy::at(threshold),
                )?;
                run_accurate(ens, &ctx)
            })?;
            let record = RepetitionRecord {
                index: r,
                generator_seed,
                checkpoint_count: checkpoint_curve.len(),
                chosen_checkpoint_fingerprint: hex(checkpoint.fingerprint()),
                checkpoint_curve,
                stddev_curve,
                threshold_curve,
                chosen,
                accurate,
            };
            Ok(Repetition { checkpoint, last, record })
        })
        .collect::<Vec<Result<Repetition<T>>>>()
        .into_iter()
        .enumerate()
        .map(|(r, rep)| rep.map_err(|e| e.context(format!("repetition {r}"))))
        .collect::<Result<Vec<_>>>()?;

    let final_ctx = ctx(config.final_seed());
    let mut ks = config.k_list.clone();
    ks.sort_unstable();
    ks.dedup();
    let ensembles = ks
        .par_iter()
        .map(|&k| {
            let members = reps[..k]
                .iter()
                .map(|rep| EnsembleMember {
                    generator: &rep.checkpoint as &dyn ConditionalGenerator<T>,
                    noise: NoisePolicy {
                        stddev: rep.record.chosen.stddev,
                        ..config.noise
                    },
                    filter: FilterPolicy {
                        threshold: rep.record.chosen.threshold,
                        ..config.filter
                    },
                })
                .collect();
            let ens = EnsembleSpec::new(members, derive_seed(config.seed, "assignment", &[k as u64]))?;
            let cas = clock.time(&format!("ensemble k={k}"), None, || run_accurate(ens, &final_ctx))?;
            Ok(EnsembleRecord { k, cas })
        })
        .collect::<Result<Vec<_>>>()?;

    // The untreated reference uses the last checkpoint of the first repetition.
    let baseline = clock.time("baseline", None, || run_baseline(&reps[0].last, &final_ctx))?;
    let real = clock.time("real accuracy", None, || real_accuracy(train, test, &final_ctx.full_cas_config()))?;

    let gafi_cas = ensembles.last().expect("k_list is non-empty").cas.cas_mean;
    let gap = GapSummary::new(real.cas_mean, baseline.cas_mean, gafi_cas);
    let mut timings = clock.log.into_inner().expect("timing log");
    timings.sort_by(|a, b| a.started_secs.total_cmp(&b.started_secs));
    Ok(GafiReport {
        seed: config.seed,
        fast_budget: config.budget.scaled(config.fast.budget_scale),
        fast_seeds: config.fast_seeds(),
        accurate_seeds: config.accurate_seeds(),
        oracle_seed: config.oracle_seed(),
        oracle_train_accuracy: crate::evaluation::accuracy(&oracle, train),
        sweep_sampling: "independent-per-point".into(),
        ensemble_assignment: "per-sample".into(),
        repetitions: reps.into_iter().map(|r| r.record).collect(),
        ensembles,
        baseline,
        real,
        gap,
        timings,
    })
}

/// Filtering off, then every grid threshold, at `s = 1` on a static set.
pub fn ablate_filtering<T: Real>(generator: &dyn ConditionalGenerator<T>, ctx: &EvalContext<'_, T>) -> Result<SweepCurve> {
    let mut settings = vec![("off".to_string(), -1.0, None)];
    settings.extend(threshold_grid(&ctx.filter)?.into_iter().map(|t| (label(t), t, Some(t))));
    let cfg = ctx.full_cas_config();
    let points = settings
        .into_par_iter()
        .map(|(label, value, t)| {
            let outcome = ctx.point(generator, 1.0, t, RecycleSchedule::Static, &cfg, ctx.final_seed)?;
            Ok(SweepPoint { label, value, outcome })
        })
        .collect::<Result<Vec<_>>>()?;
    SweepCurve::new("threshold", points)
}

/// Recycle periods static, 10, 5 and 1, unfiltered at `s = 1`. The axis value
/// is the regeneration frequency `1/N`.
pub fn ablate_recycle<T: Real>(generator: &dyn ConditionalGenerator<T>, ctx: &EvalContext<'_, T>) -> Result<SweepCurve> {
    ablate_recycle_periods(generator, ctx, &DEFAULT_RECYCLE_PERIODS)
}

pub const DEFAULT_RECYCLE_PERIODS: [RecycleSchedule; 4] = [
    RecycleSchedule::Static,
    RecycleSchedule::Every(10),
    RecycleSchedule::Every(5),
    RecycleSchedule::Every(1),
];

/// As [`ablate_recycle`] over arbitrary periods, ordered by frequency.
pub fn ablate_recycle_periods<T: Real>(
    generator: &dyn ConditionalGenerator<T>,
    ctx: &EvalContext<'_, T>,
    periods: &[RecycleSchedule],
) -> Result<SweepCurve> {
    let mut schedules = periods.to_vec();
    for s in &schedules {
        s.validate()?;
    }
    schedules.sort_by(|a, b| a.frequency().total_cmp(&b.frequency()));
    schedules.dedup();
    let cfg = ctx.full_cas_config();
    let points = schedules
        .par_iter()
        .map(|&schedule| {
            Ok(SweepPoint {
                label: schedule.to_string(),
                value: schedule.frequency(),
                outcome: ctx.point(generator, 1.0, None, schedule, &cfg, ctx.final_seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SweepCurve::new("recycle", points)
}

/// The stddev grid twice on a static set: unfiltered, and filtered at `t = 0`.
pub fn ablate_expansion<T: Real>(
    generator: &dyn ConditionalGenerator<T>,
    ctx: &EvalContext<'_, T>,
) -> Result<(SweepCurve, SweepCurve)> {
    let grid = stddev_grid(&ctx.noise)?;
    let cfg = ctx.full_cas_config();
    let curve = |axis: &str, threshold: Option<f64>| -> Result<SweepCurve> {
        let points = grid
            .par_iter()
            .map(|&s| {
                Ok(SweepPoint {
                    label: label(s),
                    value: s,
                    outcome: ctx.point(generator, s, threshold, RecycleSchedule::Static, &cfg, ctx.final_seed)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SweepCurve::new(axis, points)
    };
    Ok((curve("stddev-unfiltered", None)?, curve("stddev-filtered", Some(0.0))?))
}
